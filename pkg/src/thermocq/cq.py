"""Multistep convolution quadrature (BDF2 and trapezoidal rule).

For a Laplace-domain symbol A(s) the CQ weights are the Taylor coefficients
of A(delta(z)/dt).  They are computed on a circle of radius R with an FFT of
length L.  The same contour diagonalizes the lower-triangular Toeplitz system
of the marching scheme, which gives the all-at-once solver.

Radius choice: with L contour points and N steps the aliasing error behaves
like R^L and the amplification of rounding errors like eps R^-N, so
``R = eps^(1/(L+N+1))``; for L = N + 1 this is the usual eps^(1/(2(N+1))).
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

EPS = float(np.finfo(float).eps)


class CQError(RuntimeError):
    pass


@dataclass(frozen=True)
class CQScheme:
    name: str
    delta: Callable[[np.ndarray], np.ndarray]
    order: int


def _delta_bdf2(z):
    return 1.5 - 2.0 * z + 0.5 * z * z


def _delta_trap(z):
    return 2.0 * (1.0 - z) / (1.0 + z)


BDF2 = CQScheme("bdf2", _delta_bdf2, 2)
TRAPEZOIDAL = CQScheme("trap", _delta_trap, 2)
SCHEMES = {"bdf2": BDF2, "trap": TRAPEZOIDAL, "trapezoidal": TRAPEZOIDAL}


def get_scheme(scheme) -> CQScheme:
    if isinstance(scheme, CQScheme):
        return scheme
    try:
        return SCHEMES[str(scheme).lower()]
    except KeyError:
        raise CQError(f"unknown CQ scheme {scheme!r}") from None


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    N: int

    def __post_init__(self):
        if not self.dt > 0:
            raise CQError("time step must be positive")
        if self.N < 1:
            raise CQError("need at least one time step")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    @property
    def final_time(self) -> float:
        return self.dt * self.N

    @classmethod
    def from_final_time(cls, T: float, dt: float) -> "TimeGrid":
        N = int(round(T / dt))
        if abs(N * dt - T) > 1e-9 * T:
            raise CQError(f"final time {T} is not a multiple of dt = {dt}")
        return cls(dt, N)


def choose_radius(N: int, machine_eps: float = EPS, L: int | None = None) -> float:
    """Contour radius for N steps and an FFT of length L (default N + 1)."""
    if N < 1:
        raise CQError("N must be >= 1")
    L = N + 1 if L is None else int(L)
    return float(machine_eps ** (1.0 / (L + N + 1)))


def contour(scheme, dt: float, N: int, oversampling: int = 1, machine_eps: float = EPS):
    """Contour data (L, R, zeta_l, s_l) with s_l = delta(R zeta_l)/dt."""
    sch = get_scheme(scheme)
    L = oversampling * (N + 1)
    R = choose_radius(N, machine_eps, L)
    zeta = np.exp(2j * np.pi * np.arange(L) / L)
    s = sch.delta(R * zeta) / dt
    return L, R, zeta, s


def cq_weights(symbol, scheme, dt: float, N: int, oversampling: int = 4,
               real_symbol: bool = True) -> np.ndarray:
    """Weights A_0..A_N of ``symbol`` (scalar or array valued).

    With ``real_symbol`` the symbol is assumed to satisfy A(conj s) = conj A(s)
    and is evaluated only on the upper half of the contour.
    """
    L, R, zeta, s = contour(scheme, dt, N, oversampling)
    half = L // 2 + 1 if real_symbol else L
    vals = [np.asarray(symbol(s[l]), dtype=complex) for l in range(half)]
    vals = np.stack(vals)
    if real_symbol:
        rest = np.conj(vals[1:L - half + 1][::-1])
        vals = np.concatenate([vals, rest])
    w = np.fft.fft(vals, axis=0)[: N + 1] / L
    scale = R ** -np.arange(N + 1, dtype=float)
    w = w * scale.reshape((-1,) + (1,) * (w.ndim - 1))
    return w.real if real_symbol else w


def cq_convolve(weights: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Discrete convolution y_n = sum_m w_m g_{n-m}, n = 0..N (scalar weights)."""
    g = np.asarray(g)
    N = len(g)
    out = np.zeros(g.shape, dtype=np.result_type(weights, g))
    for m in range(min(len(weights), N)):
        out[m:] += weights[m] * g[: N - m]
    return out


@dataclass
class SolutionHistory:
    """Coefficient vectors b_n at the stored steps."""

    dt: float
    steps: np.ndarray
    values: np.ndarray  # (len(steps), n)
    n_solves: int = 0
    info: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.dt * self.steps

    def at_step(self, n: int) -> np.ndarray:
        idx = np.flatnonzero(self.steps == n)
        if len(idx) == 0:
            raise KeyError(f"step {n} was not stored")
        return self.values[idx[0]]


def march(weights: Sequence, data: np.ndarray, solve0=None) -> SolutionHistory:
    """Solve A_0 b_n = f_n - sum_{m=1}^n A_m b_{n-m}, n = 0..N.

    ``weights`` are matrices (dense, sparse) or scalars; ``solve0`` solves with
    A_0 (defaults to a dense LU or scalar division).
    """
    data = np.asarray(data)
    N = len(data) - 1
    if len(weights) < N + 1:
        raise CQError("not enough weights for the requested number of steps")
    A0 = weights[0]
    if solve0 is None:
        if np.ndim(A0) == 0:
            if A0 == 0:
                raise CQError("singular A_0")
            solve0 = lambda r: r / A0
        else:
            from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

            A0d = A0.toarray() if hasattr(A0, "toarray") else np.asarray(A0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", LinAlgWarning)
                lu = lu_factor(A0d)
            if np.any(np.diag(lu[0]) == 0):
                raise CQError("singular A_0")
            solve0 = lambda r: lu_solve(lu, r)
    b = np.zeros(data.shape, dtype=complex if np.iscomplexobj(data) or _any_complex(weights) else float)
    for n in range(N + 1):
        r = data[n].astype(b.dtype, copy=True)
        for m in range(1, n + 1):
            r -= weights[m] * b[n - m] if np.ndim(weights[m]) == 0 else weights[m] @ b[n - m]
        b[n] = solve0(r)
    return SolutionHistory(dt=np.nan, steps=np.arange(N + 1), values=b, n_solves=1)


def _any_complex(weights) -> bool:
    w0 = weights[0]
    return np.iscomplexobj(w0.data if hasattr(w0, "data") and not isinstance(w0, np.ndarray) else w0)


@dataclass(frozen=True)
class SeparableData:
    """Data f_n = sum_j ops[j] @ coeffs[j][n] with coeffs[j] of shape (N+1, m_j).

    ``ops[j]`` is any object supporting ``@`` with an m_j vector (dense or sparse
    matrix); a 1D array is treated as an (n x 1) column.
    """

    ops: tuple
    coeffs: tuple

    @property
    def n_steps(self) -> int:
        return len(self.coeffs[0]) - 1

    def transform(self, weights: np.ndarray) -> list[np.ndarray]:
        """sum_n weights[n, l] coeffs[j][n] for all j -> list of (n_l, m_j)."""
        return [weights.T @ c for c in self.coeffs]

    def assemble(self, chats: list[np.ndarray], l: int) -> np.ndarray:
        out = None
        for op, ch in zip(self.ops, chats):
            op = np.asarray(op)[:, None] if isinstance(op, np.ndarray) and op.ndim == 1 else op
            term = op @ ch[l]
            out = term if out is None else out + term
        return out

    def dense(self) -> np.ndarray:
        N = self.n_steps
        rows = []
        for n in range(N + 1):
            f = None
            for op, c in zip(self.ops, self.coeffs):
                op = np.asarray(op)[:, None] if isinstance(op, np.ndarray) and op.ndim == 1 else op
                term = op @ c[n]
                f = term if f is None else f + term
            rows.append(np.asarray(f))
        return np.array(rows)


def default_workers() -> int:
    """Worker threads for frequency solves, capped by THERMOCQ_THREADS (default 1)."""
    raw = os.environ.get("THERMOCQ_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise CQError(f"THERMOCQ_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CQError(f"THERMOCQ_THREADS must be a positive integer, got {raw!r}")
    return n


def all_at_once(freq_solve, data, scheme, dt: float, N: int | None = None, *,
                oversampling: int = 1, steps=None, real_data: bool = True,
                machine_eps: float = EPS, workers: int | None = None) -> SolutionHistory:
    """Frequency-diagonalized CQ solve.

    ``freq_solve(s, F)`` returns the solution B(s) of A(s) B = F; it may return
    a longer vector (extra outputs that depend linearly on the data).
    ``data`` is an (N+1, n) array or a :class:`SeparableData`.  Only the steps
    in ``steps`` (default all) are reconstructed.  For real data and real
    symbols only the upper half of the contour is solved.  Frequency solves
    may run on ``workers`` threads; results are combined in contour order so
    the output does not depend on the thread count.
    """
    sep = data if isinstance(data, SeparableData) else None
    if sep is None:
        data = np.asarray(data)
    Nd = sep.n_steps if sep is not None else len(data) - 1
    N = Nd if N is None else N
    if N != Nd:
        raise CQError("data length does not match N")
    L, R, zeta, s = contour(scheme, dt, N, oversampling, machine_eps)
    steps = np.arange(N + 1) if steps is None else np.atleast_1d(np.asarray(steps, dtype=int))
    if np.any(steps < 0) or np.any(steps > N):
        raise CQError("requested steps outside 0..N")
    n = np.arange(N + 1)
    # forward transform F_l = sum_n f_n R^n zeta_l^n
    fw = (R ** n)[:, None] * np.exp(2j * np.pi * np.outer(n, np.arange(L)) / L)
    n_l = L // 2 + 1 if real_data else L
    if sep is not None:
        chats = sep.transform(fw[:, :n_l])
        get_F = lambda l: sep.assemble(chats, l)
    else:
        Fhat = fw[:, :n_l].T @ data
        get_F = lambda l: Fhat[l]
    # inverse: b_n = R^-n / L sum_l B_l zeta_l^-n
    inv = np.exp(-2j * np.pi * np.outer(steps, np.arange(L)) / L) * (R ** -steps.astype(float))[:, None] / L
    workers = default_workers() if workers is None else max(1, int(workers))

    def one(l):
        B = np.asarray(freq_solve(s[l], get_F(l)))
        if not np.all(np.isfinite(B)):
            raise CQError(f"frequency solve failed at s = {s[l]}")
        return B

    acc = None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = pool.map(one, range(n_l)) if workers > 1 else map(one, range(n_l))
        for l, B in enumerate(results):
            if acc is None:
                acc = np.zeros((len(steps), B.size), dtype=complex)
            c = inv[:, l][:, None] * B[None, :]
            if real_data:
                acc += 2 * c.real if 0 < l and L - l != l else c.real
            else:
                acc += c
    values = acc.real if real_data else acc
    return SolutionHistory(dt=dt, steps=steps, values=values, n_solves=n_l,
                           info={"L": L, "R": R})
