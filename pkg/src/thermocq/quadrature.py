"""Quadrature rules on the reference triangle and on [0, 1].

Three families are provided:

* ``triangle_rule`` -- collapsed (conical product) Gauss rules on the
  reference triangle {x, y >= 0, x + y <= 1}; positive weights, any order.
* ``gauss01`` -- Gauss-Legendre on [0, 1].
* ``log_gauss01`` -- Gauss rules for the weight ``-log(x)`` on [0, 1], used
  for the logarithmic singularities of the 2D Helmholtz kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_ORDER = 40


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the reference triangle.

    ``points`` has shape (nq, 2); weights sum to 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def _triangle_rule(order: int) -> QuadratureRule:
    n = (order + 2) // 2
    # Gauss-Jacobi with weight (1 - u) in the collapsed direction
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (1.0 + xj)
    wu = 0.25 * wj
    xg, wg = np.polynomial.legendre.leggauss(n)
    v = 0.5 * (1.0 + xg)
    wv = 0.5 * wg
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    pts.setflags(write=False)
    w = W.ravel()
    w.setflags(write=False)
    return QuadratureRule(points=pts, weights=w, order=order)


def triangle_rule(order: int) -> QuadratureRule:
    """Rule exact for polynomials of total degree <= ``order``."""
    if order < 1:
        raise QuadratureError(f"quadrature order must be >= 1, got {order}")
    if order > MAX_TRIANGLE_ORDER:
        raise QuadratureError(
            f"quadrature order {order} exceeds the implemented maximum {MAX_TRIANGLE_ORDER}"
        )
    return _triangle_rule(int(order))


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def log_gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss rule for ``int_0^1 -log(x) f(x) dx``.

    Recurrence coefficients come from the modified-moment-free Chebyshev
    algorithm run on the exact moments 1/(k+1)^2 in 100-digit arithmetic.
    """
    with mpmath.workdps(100):
        mom = [mpmath.mpf(1) / (k + 1) ** 2 for k in range(2 * n)]
        a = [mpmath.mpf(0)] * n
        b = [mpmath.mpf(0)] * n
        sig_prev = [mpmath.mpf(0)] * (2 * n)
        sig = list(mom)
        a[0] = mom[1] / mom[0]
        b[0] = mom[0]
        for k in range(1, n):
            new = [mpmath.mpf(0)] * (2 * n)
            for l in range(k, 2 * n - k):
                new[l] = sig[l + 1] - a[k - 1] * sig[l] - b[k - 1] * sig_prev[l]
            a[k] = new[k + 1] / new[k] - sig[k] / sig[k - 1]
            b[k] = new[k] / sig[k - 1]
            sig_prev, sig = sig, new
        J = mpmath.zeros(n, n)
        for k in range(n):
            J[k, k] = a[k]
            if k + 1 < n:
                J[k, k + 1] = J[k + 1, k] = mpmath.sqrt(b[k + 1])
        evals, evecs = mpmath.eigsy(J)
        x = np.array([float(evals[i]) for i in range(n)])
        w = np.array([float(b[0] * evecs[0, i] ** 2) for i in range(n)])
    order = np.argsort(x)
    return x[order], w[order]
