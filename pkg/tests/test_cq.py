import numpy as np
import pytest
import scipy.sparse as sps
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from thermocq.cq import (
    BDF2, TRAPEZOIDAL, CQError, SeparableData, TimeGrid, all_at_once, choose_radius, contour,
    cq_convolve, cq_weights, get_scheme, march,
)


def _taylor(expr, n):
    z = sp.Symbol("z")
    poly = sp.series(expr(z), z, 0, n + 1).removeO()
    return np.array([float(poly.coeff(z, m)) for m in range(n + 1)])


def test_bdf2_weights_of_s_are_exact():
    dt = 0.1
    w = cq_weights(lambda s: s, BDF2, dt, 8)
    np.testing.assert_allclose(w * dt, [1.5, -2.0, 0.5, 0, 0, 0, 0, 0, 0], atol=1e-12)


def test_trapezoidal_weights_of_s_alternate():
    dt = 0.05
    N = 12
    w = cq_weights(lambda s: s, TRAPEZOIDAL, dt, N)
    ref = (2 / dt) * np.array([1.0] + [2.0 * (-1) ** m for m in range(1, N + 1)])
    np.testing.assert_allclose(w, ref, rtol=0, atol=1e-10 * (2 / dt))
    oracle = _taylor(lambda z: 2 * (1 - z) / (1 + z), N) / dt
    np.testing.assert_allclose(w, oracle, atol=1e-10 * (2 / dt))


def test_bdf2_weights_of_s_squared():
    dt = 0.1
    w = cq_weights(lambda s: s * s, BDF2, dt, 8)
    oracle = _taylor(lambda z: (sp.Rational(3, 2) - 2 * z + z**2 / 2) ** 2, 8)
    np.testing.assert_allclose(oracle[:5], [2.25, -6, 5.5, -2, 0.25])
    np.testing.assert_allclose(w * dt**2, oracle, atol=1e-10)


def test_constant_symbol():
    w = cq_weights(lambda s: 3.0 + 0 * s, BDF2, 0.2, 6)
    np.testing.assert_allclose(w, [3, 0, 0, 0, 0, 0, 0], atol=1e-12)


def test_matrix_valued_symbol():
    A = np.array([[1.0, 2.0], [0.5, -1.0]])
    w = cq_weights(lambda s: s * A, BDF2, 0.1, 4)
    assert w.shape == (5, 2, 2)
    np.testing.assert_allclose(w[1], -20 * A, atol=1e-10)


def test_radius():
    assert choose_radius(127) == pytest.approx(0.8687, abs=1e-4)
    r = [choose_radius(n) for n in (4, 16, 64, 256)]
    assert all(a < b < 1 for a, b in zip(r, r[1:]))
    with pytest.raises(CQError):
        choose_radius(0)


def test_weights_do_not_depend_on_radius():
    sym = lambda s: 1.0 / (s + 1.0) ** 2
    w1 = cq_weights(sym, BDF2, 0.1, 20, oversampling=4)
    w2 = cq_weights(sym, BDF2, 0.1, 20, oversampling=8)
    np.testing.assert_allclose(w1, w2, atol=1e-10)


def test_product_symbol_is_convolution():
    dt, N = 0.05, 40
    for scheme in (BDF2, TRAPEZOIDAL):
        wa = cq_weights(lambda s: 1 / (s + 1), scheme, dt, N)
        wb = cq_weights(lambda s: s / (s * s + 4), scheme, dt, N)
        wab = cq_weights(lambda s: s / ((s + 1) * (s * s + 4)), scheme, dt, N)
        np.testing.assert_allclose(cq_convolve(wa, wb), wab, atol=1e-8 * np.abs(wab).max())


def _decay_error(scheme, N, T=2.0):
    """CQ for y = (s+1)^-1 f with f = t^3 e^-t; error at t = T against quadrature."""
    dt = T / N
    t = dt * np.arange(N + 1)
    f = t**3 * np.exp(-t)
    y = cq_convolve(cq_weights(lambda s: 1 / (s + 1), scheme, dt, N), f)
    exact = quad(lambda x: np.exp(-(T - x)) * x**3 * np.exp(-x), 0, T, epsabs=1e-14)[0]
    return abs(y[-1] - exact)


@pytest.mark.parametrize("scheme", [BDF2, TRAPEZOIDAL])
def test_decay_order_two(scheme):
    errs = [_decay_error(scheme, 20 * 2**j) for j in range(5)]
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert abs(rates[-1] - 2.0) <= 0.1, rates


def test_march_with_symbol_s_is_classical_bdf2():
    dt, N = 0.1, 30
    t = dt * np.arange(N + 1)
    f = np.sin(t) * t**2
    w = cq_weights(lambda s: 1 / s, BDF2, dt, N)
    y = cq_convolve(w, f)
    # (3/2 y_n - 2 y_{n-1} + 1/2 y_{n-2}) / dt = f_n with zero start values
    z = np.zeros(N + 1)
    for n in range(N + 1):
        z1 = z[n - 1] if n >= 1 else 0.0
        z2 = z[n - 2] if n >= 2 else 0.0
        z[n] = (dt * f[n] + 2 * z1 - 0.5 * z2) / 1.5
    np.testing.assert_allclose(y, z, atol=1e-12 * np.abs(z).max())
    ws = cq_weights(lambda s: s, BDF2, dt, N)
    hist = march(ws, f[:, None] * 1.0)
    np.testing.assert_allclose(hist.values[:, 0], z, atol=1e-10 * np.abs(z).max())


def _matrix_symbol(s, n=3):
    A = np.diag(np.arange(1.0, n + 1)) + 0.3 * np.eye(n, k=1)
    return s * s * np.eye(n) + s * A + np.diag([2.0, 1.0, 0.5][:n])


def test_all_at_once_matches_march():
    dt, N = 0.05, 32
    t = dt * np.arange(N + 1)
    data = np.stack([t**3 * np.exp(-t), np.sin(2 * t) * t**2, t**4], axis=1)
    hist = all_at_once(lambda s, F: np.linalg.solve(_matrix_symbol(s), F), data, BDF2, dt, N, oversampling=2)
    w = cq_weights(_matrix_symbol, BDF2, dt, N)
    ref = march(list(w), data)
    np.testing.assert_allclose(hist.values, ref.values, atol=1e-8 * np.abs(ref.values).max())
    assert hist.n_solves == N + 2
    np.testing.assert_allclose(hist.times, t)


def test_all_at_once_complex_path_and_separable_data():
    dt, N = 0.05, 20
    t = dt * np.arange(N + 1)
    ops = (np.array([1.0, 0.0, 2.0]), sps.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])))
    coeffs = (np.sin(t)[:, None] * t[:, None] ** 2, np.stack([t**3, t**2 * np.cos(t)], axis=1))
    sep = SeparableData(ops, coeffs)
    solve = lambda s, F: np.linalg.solve(_matrix_symbol(s), F)
    a = all_at_once(solve, sep, BDF2, dt)
    b = all_at_once(solve, sep.dense(), BDF2, dt, real_data=False)
    np.testing.assert_allclose(a.values, b.values.real, atol=1e-9)
    assert np.abs(b.values.imag).max() <= 1e-8 * np.abs(b.values).max()
    assert b.n_solves == N + 1


def test_selected_steps_and_augmented_output():
    dt, N = 0.1, 16
    t = dt * np.arange(N + 1)
    data = (t**3)[:, None]
    solve = lambda s, F: np.concatenate([F / (s + 1), 2 * F / (s + 1)])
    full = all_at_once(solve, data, TRAPEZOIDAL, dt)
    part = all_at_once(solve, data, TRAPEZOIDAL, dt, steps=[4, 16])
    np.testing.assert_allclose(part.values, full.values[[4, 16]], atol=1e-12)
    np.testing.assert_allclose(full.values[:, 1], 2 * full.values[:, 0], atol=1e-12)
    with pytest.raises(KeyError):
        part.at_step(5)
    with pytest.raises(CQError):
        all_at_once(solve, data, TRAPEZOIDAL, dt, steps=[N + 1])


def test_real_data_halves_the_solves():
    solve = lambda s, F: F / (s + 1)
    data = np.ones((33, 1))
    assert all_at_once(solve, data, BDF2, 0.1).n_solves == 33 // 2 + 1
    assert all_at_once(solve, data, BDF2, 0.1, real_data=False).n_solves == 33


def test_zero_data_gives_zero_history():
    hist = all_at_once(lambda s, F: np.linalg.solve(_matrix_symbol(s), F), np.zeros((11, 3)), BDF2, 0.1)
    assert np.all(hist.values == 0)


@pytest.mark.parametrize("scheme", [BDF2, TRAPEZOIDAL])
def test_causality(scheme):
    dt, N, n0 = 0.05, 40, 12
    t = dt * np.arange(N + 1)
    f = np.where(t > t[n0], (t - t[n0]) ** 3, 0.0)
    data = np.stack([f, 2 * f, -f], axis=1)
    hist = all_at_once(lambda s, F: np.linalg.solve(_matrix_symbol(s), F), data, scheme, dt,
                       oversampling=2)
    scale = np.abs(hist.values).max()
    assert scale > 0
    assert np.abs(hist.values[: n0 + 1]).max() <= 1e-8 * scale


def test_worker_count_does_not_change_result():
    dt, N = 0.05, 24
    t = dt * np.arange(N + 1)
    data = np.stack([t**3, t**2, np.sin(t)], axis=1)
    solve = lambda s, F: np.linalg.solve(_matrix_symbol(s), F)
    a = all_at_once(solve, data, BDF2, dt, workers=1)
    b = all_at_once(solve, data, BDF2, dt, workers=3)
    assert np.array_equal(a.values, b.values)


def test_nonfinite_solve_is_reported():
    with pytest.raises(CQError):
        all_at_once(lambda s, F: F * np.nan, np.ones((5, 1)), BDF2, 0.1)


def test_singular_first_weight():
    with pytest.raises(CQError, match="singular"):
        march([0.0, 1.0], np.ones((2, 1)))
    with pytest.raises(CQError, match="singular"):
        march([np.zeros((2, 2)), np.eye(2)], np.ones((2, 2)))


def test_scheme_lookup_and_grid():
    assert get_scheme("BDF2") is BDF2
    assert get_scheme("trapezoidal") is TRAPEZOIDAL
    with pytest.raises(CQError):
        get_scheme("euler")
    g = TimeGrid.from_final_time(1.5, 3.75e-2)
    assert g.N == 40 and g.final_time == pytest.approx(1.5)
    with pytest.raises(CQError):
        TimeGrid(-1.0, 4)
    with pytest.raises(CQError):
        TimeGrid.from_final_time(1.0, 0.3)


@pytest.mark.parametrize("scheme", [BDF2, TRAPEZOIDAL])
@pytest.mark.parametrize("radius", [0.5, 0.9])
def test_a_stability_on_contour(scheme, radius):
    z = radius * np.exp(2j * np.pi * np.arange(400) / 400)
    assert np.all(scheme.delta(z).real > 0)


def test_contour_points():
    L, R, zeta, s = contour(BDF2, 0.1, 15, oversampling=2)
    assert L == 32 and R == pytest.approx(choose_radius(15, L=32))
    np.testing.assert_allclose(s, BDF2.delta(R * zeta) / 0.1)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 5.0), b=st.floats(-3.0, 3.0))
def test_real_symbol_weights_have_no_imaginary_leak(a, b):
    sym = lambda s: 1.0 / (s * s + a * s + b * b + 0.1)
    w = cq_weights(sym, TRAPEZOIDAL, 0.1, 24, real_symbol=False)
    assert np.abs(w.imag).max() <= 1e-8 * max(1.0, np.abs(w.real).max())


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-3, 3), d=st.floats(-3, 3))
def test_weights_are_linear_in_symbol(c, d):
    f = lambda s: 1 / (s + 2)
    g = lambda s: s / (s + 1) ** 2
    wf = cq_weights(f, BDF2, 0.1, 12)
    wg = cq_weights(g, BDF2, 0.1, 12)
    wh = cq_weights(lambda s: c * f(s) + d * g(s), BDF2, 0.1, 12)
    np.testing.assert_allclose(wh, c * wf + d * wg, atol=1e-10)
