from math import factorial

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermocq.quadrature import QuadratureError, gauss01, log_gauss01, triangle_rule


def _monomial_integral(a, b):
    # int_T x^a y^b over the reference triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@settings(max_examples=60, deadline=None)
@given(order=st.integers(1, 20), a=st.integers(0, 20), b=st.integers(0, 20))
def test_triangle_rule_is_exact_up_to_its_order(order, a, b):
    if a + b > order:
        return
    rule = triangle_rule(order)
    x, y = rule.points.T
    assert np.dot(rule.weights, x**a * y**b) == pytest.approx(_monomial_integral(a, b), rel=1e-13, abs=1e-16)


def test_triangle_rule_points_inside_with_positive_weights():
    for order in (1, 4, 9, 16):
        rule = triangle_rule(order)
        x, y = rule.points.T
        assert np.all(rule.weights > 0)
        assert np.all((x > 0) & (y > 0) & (x + y < 1))
        assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)


def test_triangle_rule_rejects_bad_orders():
    with pytest.raises(QuadratureError):
        triangle_rule(0)
    with pytest.raises(QuadratureError):
        triangle_rule(1000)


def test_gauss01_exactness():
    x, w = gauss01(6)
    for k in range(12):
        assert np.dot(w, x**k) == pytest.approx(1 / (k + 1), rel=1e-14)


def test_log_gauss_against_mpmath():
    x, w = log_gauss01(8)
    assert np.all(w > 0) and np.all((x > 0) & (x < 1))
    for k in range(16):
        exact = float(mpmath.quad(lambda t: -mpmath.log(t) * t**k, [0, 1]))
        assert np.dot(w, x**k) == pytest.approx(exact, rel=1e-13)
    # a non-polynomial integrand converges as well
    exact = float(mpmath.quad(lambda t: -mpmath.log(t) * mpmath.cos(3 * t), [0, 1]))
    x, w = log_gauss01(12)
    assert np.dot(w, np.cos(3 * x)) == pytest.approx(exact, rel=1e-13)
