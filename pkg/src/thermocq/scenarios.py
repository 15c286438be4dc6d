"""Manufactured solutions, incident waves, error metrics and the study drivers."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp_
from numpy.polynomial import Polynomial

from .bem import (
    BEMQuadrature, BoundarySpaces, assemble_calderon, bessel_k, boundary_spaces_from_fe, eval_potentials,
)
from .config import RunConfig
from .cq import SeparableData, all_at_once, get_scheme
from .fem_assembly import (
    MATERIAL_PRESETS, AssembledFemMatrices, MaterialModel, assemble_fem_block, assemble_fem_matrices,
    default_order, hooke_stress, load_scalar, load_scalar_grad, load_stress, load_vector,
    volume_quadrature,
)
from .fem_space import FESpace, build_space
from .mesh import BoundaryMesh, Mesh, extract_boundary, load_mesh, refine
from .system import (
    BoundaryLoad, MonolithicSolver, SchurSolver, SolverError, assemble_block_system,
    assemble_trace_coupling, boundary_load,
)

log = logging.getLogger(__name__)

ERROR_NAMES = ("v", "uL2", "uH1", "thL2", "thH1")


class StudyError(RuntimeError):
    """A study level failed; ``report`` holds the rows completed so far."""

    def __init__(self, msg: str, report: "ErrorReport"):
        super().__init__(msg)
        self.report = report


# -- smooth Heaviside and time profiles ----------------------------------------------------

_u = Polynomial([-1.0, 1.0])  # t - 1
_H = Polynomial([0, 0, 0, 0, 0, 1.0]) * (1 - 5 * _u + 15 * _u**2 - 35 * _u**3 + 70 * _u**4 - 126 * _u**5)
_P = Polynomial([0.0, 2.0, 1.0])  # t^2 + 2t


def _piecewise(t, inner: Polynomial, outer, derivative: int):
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, outer(t, derivative), inner.deriv(derivative)(t) if derivative else inner(t))
    return np.where(t <= 0.0, 0.0, out)


# 1 - H(t) = (1-t)^6 q(t) with q = 1 + 6t + 21t^2 + 56t^3 + 126t^4; evaluated in this
# factored form near t = 1, where the power form loses monotonicity to rounding
_q = Polynomial([1.0, 6.0, 21.0, 56.0, 126.0])


def _complement(t, derivative: int):
    """d^k/dt^k of (1-t)^6 q(t) by the Leibniz rule."""
    w = 1.0 - t
    out = np.zeros_like(t)
    for j in range(min(derivative, 6) + 1):
        fall = math.perm(6, j) * (-1) ** j  # d^j (1-t)^6 = (-1)^j 6!/(6-j)! (1-t)^(6-j)
        out = out + math.comb(derivative, j) * fall * w ** (6 - j) * _q.deriv(derivative - j)(t)
    return out


def heaviside_c5(t, derivative: int = 0):
    """Degree-10 smooth step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    hi = -_complement(t, derivative) if derivative else 1.0 - _complement(t, 0)
    lo = _H.deriv(derivative)(t) if derivative else _H(t)
    inner = np.where(t < 0.5, lo, hi)
    out = np.where(t >= 1.0, 1.0 if derivative == 0 else 0.0, inner)
    return np.where(t <= 0.0, 0.0, out)


def time_factor(t, derivative: int = 0):
    """T(t) = H(t) (t^2 + 2t) and its first two derivatives."""
    return _piecewise(t, _H * _P, lambda s, d: _P.deriv(d)(s) if d else _P(s), derivative)


def source_signal(t, derivative: int = 0):
    """f(t) = H(t) sin 3t (derivative 0 or 1)."""
    t = np.asarray(t, dtype=float)
    if derivative == 0:
        return heaviside_c5(t) * np.sin(3 * t)
    if derivative == 1:
        return heaviside_c5(t, 1) * np.sin(3 * t) + 3 * heaviside_c5(t) * np.cos(3 * t)
    raise ValueError("derivative must be 0 or 1")


# -- manufactured solid fields -----------------------------------------------------------


def solid_u(x, y):
    return x**3 + x * y + y**3, np.sin(x) * np.cos(y)


def solid_grad_u(x, y):
    """(..., 2, 2) indexed [component, direction]."""
    g = np.empty(np.shape(x) + (2, 2))
    g[..., 0, 0] = 3 * x**2 + y
    g[..., 0, 1] = x + 3 * y**2
    g[..., 1, 0] = np.cos(x) * np.cos(y)
    g[..., 1, 1] = -np.sin(x) * np.sin(y)
    return g


def solid_theta(x, y):
    return np.sin(np.pi * x) ** 2 * np.sin(y) ** 2


def solid_grad_theta(x, y):
    return np.stack([np.pi * np.sin(2 * np.pi * x) * np.sin(y) ** 2,
                     np.sin(np.pi * x) ** 2 * np.sin(2 * y)], axis=-1)


def _radius(pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    r = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(r == 0):
        raise ValueError("acoustic field requested at r = 0")
    return r


@dataclass(frozen=True)
class ManufacturedFreq:
    """u, theta as above and v = K0(s r / c) / (2 pi), a radiating field with its
    source at the origin (inside the solid)."""

    s: complex
    c: float = 1.0

    u = staticmethod(solid_u)
    grad_u = staticmethod(solid_grad_u)
    theta = staticmethod(solid_theta)
    grad_theta = staticmethod(solid_grad_theta)

    def v(self, pts) -> np.ndarray:
        r = _radius(pts)
        return bessel_k(0, self.s * r / self.c) / (2 * np.pi)

    def grad_v(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        r = _radius(pts)
        k = self.s / self.c
        dr = -k * bessel_k(1, k * r) / (2 * np.pi)
        return (dr / r)[:, None] * pts

    def dv_dn(self, pts, normals) -> np.ndarray:
        return np.einsum("pi,pi->p", self.grad_v(pts), np.atleast_2d(normals))


def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1), 0.5 * w


def duhamel_k0(g, t: float, rho: np.ndarray, weight_cosh: bool = False, n: int = 48) -> np.ndarray:
    """int_0^{acosh(t/rho)} g(t - rho cosh w) [cosh w] dw, i.e. the convolution of g
    with the inverse transform of K0(s rho).  ``g`` must vanish for negative
    arguments and be smooth apart from a kink at 1, where the interval is split."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros(rho.shape)
    live = t > rho
    if not np.any(live):
        return out
    r = rho[live]
    wmax = np.arccosh(t / r)
    w1 = np.where(t - 1 > r, np.arccosh(np.maximum((t - 1) / r, 1.0)), 0.0)
    x, wt = _gauss_legendre(n)
    acc = np.zeros(r.shape)
    for a, b in ((np.zeros_like(r), w1), (w1, wmax)):
        w = a[:, None] + (b - a)[:, None] * x[None, :]
        val = g(t - r[:, None] * np.cosh(w))
        if weight_cosh:
            val = val * np.cosh(w)
        acc += (b - a) * (val @ wt)
    out[live] = acc
    return out


@dataclass(frozen=True)
class ManufacturedTime:
    """Time-domain counterpart: u, theta scaled by T(t) and
    v = L^-1{ (2/pi) K0(s r / c) L{H(t) sin 3t} }."""

    c: float = 1.0

    def u(self, x, y, t):
        T = float(time_factor(t))
        ux, uy = solid_u(x, y)
        return T * ux, T * uy

    def grad_u(self, x, y, t):
        return float(time_factor(t)) * solid_grad_u(x, y)

    def theta(self, x, y, t):
        return float(time_factor(t)) * solid_theta(x, y)

    def grad_theta(self, x, y, t):
        return float(time_factor(t)) * solid_grad_theta(x, y)

    def v(self, pts, t: float) -> np.ndarray:
        return (2 / np.pi) * duhamel_k0(source_signal, t, _radius(pts) / self.c)

    def dv_dt(self, pts, t: float) -> np.ndarray:
        return (2 / np.pi) * duhamel_k0(lambda a: source_signal(a, 1), t, _radius(pts) / self.c)

    def grad_v(self, pts, t: float) -> np.ndarray:
        pts = np.atleast_2d(pts)
        r = _radius(pts)
        dr = -(2 / np.pi) / self.c * duhamel_k0(lambda a: source_signal(a, 1), t, r / self.c, weight_cosh=True)
        return (dr / r)[:, None] * pts

    def dv_dn(self, pts, normals, t: float) -> np.ndarray:
        return np.einsum("pi,pi->p", self.grad_v(pts, t), np.atleast_2d(normals))


# -- incident plane wave -----------------------------------------------------------------


@dataclass(frozen=True)
class IncidentPlaneWave:
    """v_inc = A chi(tau) sin(omega tau), tau = t - delay - x.d / c.

    ``window="carrier"`` restricts omega*tau to [0, width]; ``window="time"``
    restricts tau itself to [0, width].
    """

    amplitude: float = 3.0
    frequency: float = 88.0
    width: float = 0.3
    direction: tuple[float, float] = (1.0, 5.0)
    window: str = "carrier"
    delay: float = 0.0
    c: float = 1.0

    @property
    def d(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        return d / np.linalg.norm(d)

    @property
    def duration(self) -> float:
        return self.width / self.frequency if self.window == "carrier" else self.width

    def tau(self, pts, t):
        pts = np.atleast_2d(pts)
        return t - self.delay - pts @ self.d / self.c

    def profile(self, tau):
        tau = np.asarray(tau, dtype=float)
        on = (tau >= 0) & (tau <= self.duration)
        return np.where(on, self.amplitude * np.sin(self.frequency * tau), 0.0)

    def value(self, pts, t):
        return self.profile(self.tau(pts, t))

    def arrival_delay(self, boundary: BoundaryMesh) -> float:
        """Smallest delay for which the wave has not reached the scatterer's
        bounding box at t = 0."""
        proj = _box_corners(boundary) @ self.d / self.c
        return max(0.0, float(-proj.min()))

    def check_support(self, boundary: BoundaryMesh) -> None:
        if np.any(self.tau(_box_corners(boundary), 0.0) >= 0):
            raise ValueError("incident wave already touches the scatterer's bounding box at t = 0")


def _box_corners(boundary: BoundaryMesh) -> np.ndarray:
    lo, hi = boundary.start.min(axis=0), boundary.start.max(axis=0)
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]])


# -- discretization ----------------------------------------------------------------------


@dataclass
class Discretization:
    """Everything that does not depend on s for one mesh and degree."""

    mesh: Mesh
    sp: FESpace
    bs: BoundarySpaces
    material: MaterialModel
    mats: AssembledFemMatrices
    G: sp_.csr_matrix
    mass_xy: np.ndarray
    load: BoundaryLoad
    solver: str = "monolithic"
    quad: BEMQuadrature | None = None

    @property
    def n_u(self) -> int:
        return self.mats.n_u

    @property
    def n_theta(self) -> int:
        return self.mats.n_theta

    @property
    def M1(self) -> int:
        return self.G.shape[0]

    @property
    def M2(self) -> int:
        return self.mass_xy.shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.n_u + self.n_theta + self.M1 + self.M2

    @property
    def bem_scale(self) -> float:
        return self.material.rho_fluid if self.material.rho_fluid > 0 else 1.0

    def system(self, s: complex):
        c = self.material.sound_speed
        cal = assemble_calderon(s, self.bs, c, quad=self.quad)
        return assemble_block_system(s, assemble_fem_block(self.mats, s), cal, self.G, self.mass_xy,
                                     self.material.rho_fluid, self.n_u)

    def solve(self, s: complex, b: np.ndarray) -> np.ndarray:
        bsys = self.system(s)
        if self.solver == "schur":
            return SchurSolver(bsys, "bem-first").solve(b)
        return MonolithicSolver(bsys).solve(b)

    def split(self, x: np.ndarray):
        e = np.cumsum([0, self.n_u, self.n_theta, self.M1, self.M2])
        return tuple(x[e[i]:e[i + 1]] for i in range(4))

    def potentials(self, s: complex, x: np.ndarray, pts: np.ndarray) -> np.ndarray:
        _, _, phi, lam = self.split(x)
        return eval_potentials(s, self.bs, phi, lam, pts, self.material.sound_speed)


def build_discretization(mesh: Mesh, k: int, material: MaterialModel, solver: str = "monolithic") -> Discretization:
    sp = build_space(mesh, k)
    bs = boundary_spaces_from_fe(sp)
    return Discretization(
        mesh=mesh, sp=sp, bs=bs, material=material,
        mats=assemble_fem_matrices(sp, material),
        G=assemble_trace_coupling(sp, bs),
        mass_xy=bs.mass_xy(),
        load=boundary_load(sp, bs),
        solver=solver,
        quad=BEMQuadrature.for_degree(k),
    )


def build_material(cfg: RunConfig) -> MaterialModel:
    mat = MATERIAL_PRESETS[cfg.material]()
    return dataclasses.replace(mat, rho_fluid=cfg.rho_fluid, sound_speed=cfg.sound_speed, **cfg.constants)


# -- manufactured right-hand sides -------------------------------------------------------


@dataclass(frozen=True)
class VolumeLoads:
    """Load vectors of the solid forms applied to the manufactured fields."""

    stress: np.ndarray  # int (C eps(u) - zeta theta) : eps(v)
    mass: np.ndarray  # int rho u . v
    theta: np.ndarray  # int theta vartheta
    eta: np.ndarray  # int (eta u) . grad vartheta
    kappa: np.ndarray  # int (kappa grad theta) . grad vartheta
    u_normal: np.ndarray  # <u . n, psi> on the trace space


def volume_loads(disc: Discretization) -> VolumeLoads:
    sp, mat = disc.sp, disc.material
    q = volume_quadrature(sp, default_order(sp.degree) + 2)
    x, y = q.x, q.y
    U = np.stack(solid_u(x, y), axis=-1)
    gU = solid_grad_u(x, y)
    th = solid_theta(x, y)
    sigma = hooke_stress(gU, mat.lame_lambda(x, y), mat.lame_mu(x, y)) - mat.zeta(x, y) * th[..., None, None]
    un = np.einsum("pi,pi->p", np.stack(solid_u(*disc.load.points.T), axis=-1), disc.load.normals)
    return VolumeLoads(
        stress=load_stress(sp, q, sigma),
        mass=load_vector(sp, q, mat.rho_solid(x, y)[..., None] * U),
        theta=load_scalar(sp, q, th),
        eta=load_scalar_grad(sp, q, np.einsum("...ij,...j->...i", mat.eta(x, y), U)),
        kappa=load_scalar_grad(sp, q, np.einsum("...ij,...j->...i", mat.kappa(x, y), solid_grad_theta(x, y))),
        u_normal=disc.load.y @ un,
    )


def freq_rhs(disc: Discretization, mf: ManufacturedFreq, loads: VolumeLoads | None = None) -> np.ndarray:
    """Data for which the manufactured (u, theta, v) solves the coupled system at s."""
    loads = loads or volume_loads(disc)
    s, rf, sc = complex(mf.s), disc.material.rho_fluid, disc.bem_scale
    pts, nrm = disc.load.points, disc.load.normals
    d1 = loads.stress + s * s * loads.mass + s * rf * (disc.load.normal_u @ mf.v(pts))
    d2 = s * (loads.theta - loads.eta) + loads.kappa
    d3 = -sc * (s * loads.u_normal + disc.load.y @ mf.dv_dn(pts, nrm))
    return np.concatenate([d1, d2, d3, np.zeros(disc.M2)]).astype(complex)


def time_data(disc: Discretization, mt: ManufacturedTime, dt: float, N: int,
              loads: VolumeLoads | None = None) -> SeparableData:
    """Separable time-domain data f_n = sum_j op_j c_j(t_n) for the manufactured fields."""
    loads = loads or volume_loads(disc)
    rf, sc = disc.material.rho_fluid, disc.bem_scale
    nu, nt, M1, M2 = disc.n_u, disc.n_theta, disc.M1, disc.M2
    z = np.zeros
    op_T = np.concatenate([loads.stress, loads.kappa, z(M1), z(M2)])
    op_T1 = np.concatenate([z(nu), loads.theta - loads.eta, -sc * loads.u_normal, z(M2)])
    op_T2 = np.concatenate([loads.mass, z(nt), z(M1), z(M2)])
    nq = len(disc.load.points)
    op_B = sp_.bmat([
        [rf * disc.load.normal_u, None],
        [sp_.csr_matrix((nt, nq)), None],
        [None, -sc * disc.load.y],
        [None, sp_.csr_matrix((M2, nq))],
    ]).tocsr()
    t = dt * np.arange(N + 1)
    pts, nrm = disc.load.points, disc.load.normals
    samples = np.array([np.concatenate([mt.dv_dt(pts, tn), mt.dv_dn(pts, nrm, tn)]) for tn in t])
    return SeparableData(
        ops=(op_T, op_T1, op_T2, op_B),
        coeffs=(time_factor(t)[:, None], time_factor(t, 1)[:, None], time_factor(t, 2)[:, None], samples),
    )


# -- error metrics -----------------------------------------------------------------------


def sample_points(boundary: BoundaryMesh, n: int = 25, seed: int = 20240101,
                  min_distance: float = 0.1, margin: float = 0.5) -> np.ndarray:
    """Seeded uniform points in the enlarged bounding box, outside the solid and
    farther than ``min_distance`` from the boundary."""
    rng = np.random.default_rng(seed)
    lo = np.minimum(boundary.start.min(axis=0), boundary.end.min(axis=0)) - margin
    hi = np.maximum(boundary.start.max(axis=0), boundary.end.max(axis=0)) + margin
    out = []
    while len(out) < n:
        p = lo + (hi - lo) * rng.random((4 * n, 2))
        ok = ~boundary.contains(p) & (boundary.distance(p) > min_distance)
        out.extend(p[ok])
    return np.array(out[:n])


def _relative(err: float, ref: float, name: str, flags: list) -> float:
    if ref == 0:
        flags.append(name)
        log.warning("exact %s norm is zero; reporting the absolute error", name)
        return err
    return err / ref


def solid_errors(sp: FESpace, u_h: np.ndarray, th_h: np.ndarray, u_ex, gu_ex, th_ex, gth_ex,
                 flags: list | None = None) -> dict:
    """Relative L2 and H1 errors of displacement and temperature.

    ``u_ex(x, y)`` returns a component tuple, ``gu_ex`` a (..., 2, 2) array,
    ``th_ex`` and ``gth_ex`` the scalar field and its gradient.
    """
    flags = [] if flags is None else flags
    q = volume_quadrature(sp, default_order(sp.degree) + 2)
    x, y, w = q.x, q.y, q.wdet
    uh, guh = sp.evaluate_vector(u_h, q.ref_points)
    thh, gthh = sp.evaluate(th_h, q.ref_points)
    U, GU = np.stack(u_ex(x, y), axis=-1), gu_ex(x, y)
    TH, GTH = th_ex(x, y), gth_ex(x, y)

    def integral(a):
        return float(np.sum(w * a))

    e_u = integral(np.sum(np.abs(uh - U) ** 2, axis=-1))
    e_gu = integral(np.sum(np.abs(guh - GU) ** 2, axis=(-1, -2)))
    n_u = integral(np.sum(np.abs(U) ** 2, axis=-1))
    n_gu = integral(np.sum(np.abs(GU) ** 2, axis=(-1, -2)))
    e_t = integral(np.abs(thh - TH) ** 2)
    e_gt = integral(np.sum(np.abs(gthh - GTH) ** 2, axis=-1))
    n_t = integral(np.abs(TH) ** 2)
    n_gt = integral(np.sum(np.abs(GTH) ** 2, axis=-1))
    return {
        "uL2": _relative(math.sqrt(e_u), math.sqrt(n_u), "uL2", flags),
        "uH1": _relative(math.sqrt(e_u + e_gu), math.sqrt(n_u + n_gu), "uH1", flags),
        "thL2": _relative(math.sqrt(e_t), math.sqrt(n_t), "thL2", flags),
        "thH1": _relative(math.sqrt(e_t + e_gt), math.sqrt(n_t + n_gt), "thH1", flags),
    }


def exterior_error(v_h: np.ndarray, v_ex: np.ndarray, flags: list | None = None) -> float:
    flags = [] if flags is None else flags
    return _relative(float(np.max(np.abs(v_h - v_ex))), float(np.max(np.abs(v_ex))), "v", flags)


@dataclass
class ErrorRow:
    level: int
    h: float
    dt: float | None
    ndof: int
    errors: dict
    flags: list = field(default_factory=list)
    seconds: float = 0.0
    degree: int = 1


@dataclass
class ErrorReport:
    study: str
    rows: list[ErrorRow] = field(default_factory=list)

    COLUMNS = ("level", "h", "dt", "ndof") + tuple(f"err_{n}" for n in ERROR_NAMES) \
        + tuple(f"ecr_{n}" for n in ERROR_NAMES)

    def errors(self, name: str) -> np.ndarray:
        return np.array([r.errors[name] for r in self.rows])

    def ecr(self, name: str) -> np.ndarray:
        """log2(E_{l-1} / E_l) for l >= 2 (NaN where undefined)."""
        e = self.errors(name)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log2(e[:-1] / e[1:])

    def final_ecr(self, name: str) -> float:
        return float(self.ecr(name)[-1])

    def table_rows(self) -> list[list[str]]:
        rates = {n: self.ecr(n) for n in ERROR_NAMES}
        out = []
        for i, r in enumerate(self.rows):
            row = [str(r.level), _fmt(r.h), "" if r.dt is None else _fmt(r.dt), str(r.ndof)]
            row += [_fmt(r.errors[n]) for n in ERROR_NAMES]
            row += ["" if i == 0 else _fmt(rates[n][i - 1]) for n in ERROR_NAMES]
            out.append(row)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            w.writerows(self.table_rows())

    def summary(self) -> str:
        lines = [" ".join(f"{c:>12s}" for c in self.COLUMNS)]
        lines += [" ".join(f"{v:>12s}" for v in row) for row in self.table_rows()]
        return "\n".join(lines)


def _fmt(x: float) -> str:
    return f"{x:.5E}"


# -- study drivers -----------------------------------------------------------------------


def base_mesh(cfg: RunConfig) -> Mesh:
    return refine(load_mesh(cfg.mesh_path()), cfg.refinements)


def _level_setup(cfg: RunConfig, base: Mesh, level: int) -> tuple[Mesh, int]:
    if cfg.study.endswith("-h"):
        return refine(base, level - 1), cfg.degree
    return base, cfg.degree + level - 1


def _run_levels(cfg: RunConfig, one_level) -> ErrorReport:
    report = ErrorReport(cfg.study)
    base = base_mesh(cfg)
    material = build_material(cfg)
    pts = sample_points(extract_boundary(base), cfg.samples, cfg.seed)
    for level in range(1, cfg.levels + 1):
        mesh, k = _level_setup(cfg, base, level)
        t0 = time.perf_counter()
        try:
            disc = build_discretization(mesh, k, material, cfg.solver)
            row = one_level(disc, level, pts)
        except (SolverError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            raise StudyError(f"level {level} failed: {exc}", report) from exc
        row.level, row.degree = level, k
        row.h, row.ndof = disc.bs.boundary.h, disc.n_unknowns
        row.seconds = time.perf_counter() - t0
        report.rows.append(row)
        log.info("level %d (k=%d, h=%.4g, ndof=%d) done in %.1fs: %s", level, k, row.h, row.ndof,
                 row.seconds, ", ".join(f"{n}={row.errors[n]:.3e}" for n in ERROR_NAMES))
    return report


def run_freq_convergence(cfg: RunConfig) -> ErrorReport:
    """Frequency-domain h- or p-refinement study at ``cfg.s``."""
    s = complex(cfg.s)

    def one_level(disc: Discretization, level: int, pts: np.ndarray) -> ErrorRow:
        mf = ManufacturedFreq(s, disc.material.sound_speed)
        x = disc.solve(s, freq_rhs(disc, mf))
        u, th, _, _ = disc.split(x)
        flags: list = []
        errs = solid_errors(disc.sp, u, th, solid_u, solid_grad_u, solid_theta, solid_grad_theta, flags)
        errs["v"] = exterior_error(disc.potentials(s, x, pts), mf.v(pts), flags)
        return ErrorRow(level, 0.0, None, 0, errs, flags)

    return _run_levels(cfg, one_level)


def _time_grid(t_end: float, dt: float) -> int:
    N = int(round(t_end / dt))
    if N < 1 or abs(N * dt - t_end) > 1e-9 * t_end:
        raise ValueError(f"final time {t_end} is not a multiple of dt = {dt}")
    return N


def run_time_convergence(cfg: RunConfig) -> ErrorReport:
    """Time-domain study: dyadic dt refinement together with h (time-h) or k (time-p)."""
    scheme = get_scheme(cfg.scheme)

    def one_level(disc: Discretization, level: int, pts: np.ndarray) -> ErrorRow:
        dt = cfg.dt / 2 ** (level - 1)
        N = _time_grid(cfg.t_end, dt)
        mt = ManufacturedTime(disc.material.sound_speed)
        data = time_data(disc, mt, dt, N)
        n = disc.n_unknowns

        def freq_solve(s, F):
            x = disc.solve(s, np.asarray(F, dtype=complex))
            return np.concatenate([x, disc.potentials(s, x, pts)])

        hist = all_at_once(freq_solve, data, scheme, dt, N, steps=[N], oversampling=cfg.oversampling)
        xN = hist.values[0]
        u, th, _, _ = disc.split(xN[:n])
        T = cfg.t_end
        flags: list = []
        errs = solid_errors(
            disc.sp, u, th,
            lambda x, y: mt.u(x, y, T), lambda x, y: mt.grad_u(x, y, T),
            lambda x, y: mt.theta(x, y, T), lambda x, y: mt.grad_theta(x, y, T), flags,
        )
        errs["v"] = exterior_error(xN[n:], mt.v(pts, T), flags)
        log.info("level %d: %d steps, %d frequency solves", level, N, hist.n_solves)
        return ErrorRow(level, 0.0, dt, 0, errs, flags)

    return _run_levels(cfg, one_level)


@dataclass
class ScatteringResult:
    times: np.ndarray
    grid_points: np.ndarray
    total_field: np.ndarray  # (n_times, n_grid)
    u: np.ndarray  # (n_times, 2N) interleaved
    theta: np.ndarray  # (n_times, N)
    dof_coordinates: np.ndarray
    history: object
    wave: IncidentPlaneWave


def acoustic_grid(boundary: BoundaryMesh, n: int, margin: float) -> np.ndarray:
    lo = np.minimum(boundary.start.min(axis=0), boundary.end.min(axis=0)) - margin
    hi = np.maximum(boundary.start.max(axis=0), boundary.end.max(axis=0)) + margin
    X, Y = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
    p = np.column_stack([X.ravel(), Y.ravel()])
    keep = ~boundary.contains(p) & (boundary.distance(p) > 0.25 * boundary.h)
    return p[keep]


def make_incident(cfg: RunConfig, boundary: BoundaryMesh) -> IncidentPlaneWave:
    inc = cfg.incident
    wave = IncidentPlaneWave(amplitude=inc.amplitude, frequency=inc.frequency, width=inc.width,
                             direction=tuple(inc.direction), window=inc.window, delay=0.0,
                             c=cfg.sound_speed)
    delay = inc.delay if inc.delay is not None else wave.arrival_delay(boundary) + 1e-3
    wave = dataclasses.replace(wave, delay=delay)
    wave.check_support(boundary)
    return wave


def run_scattering(cfg: RunConfig, times=None) -> ScatteringResult:
    """Plane-wave scattering by the solid; fields at the requested times."""
    mesh = base_mesh(cfg)
    material = build_material(cfg)
    disc = build_discretization(mesh, cfg.degree, material, cfg.solver)
    bnd = disc.bs.boundary
    wave = make_incident(cfg, bnd)
    N = _time_grid(cfg.t_end, cfg.dt)
    times = cfg.snapshot_times if times is None else times
    times = tuple(times) or (cfg.t_end,)
    steps = np.array([int(round(t / cfg.dt)) for t in times])
    if wave.duration < 2 * cfg.dt or 2 * np.pi / wave.frequency < 4 * cfg.dt * cfg.sound_speed:
        log.warning("incident pulse is poorly resolved by dt = %g (duration %.3g, period %.3g)",
                    cfg.dt, wave.duration, 2 * np.pi / wave.frequency)
    grid = acoustic_grid(bnd, cfg.grid, cfg.grid_margin)
    pts, nrm = disc.load.points, disc.load.normals
    dn = -(nrm @ wave.d) / wave.c
    t = cfg.dt * np.arange(N + 1)
    samples = np.array([wave.value(pts, tn) for tn in t])
    n = disc.n_unknowns
    rf, sc = material.rho_fluid, disc.bem_scale
    scheme = get_scheme(cfg.scheme)

    def freq_solve(s, g_hat):
        # transformed data of d/dt v_inc and d/dn v_inc are s g_hat and s (d.n / -c) g_hat
        b = np.concatenate([
            -s * rf * (disc.load.normal_u @ g_hat),
            np.zeros(disc.n_theta),
            sc * (disc.load.y @ (s * dn * g_hat)),
            np.zeros(disc.M2),
        ]).astype(complex)
        x = disc.solve(s, b)
        return np.concatenate([x, disc.potentials(s, x, grid)])

    log.info("scattering: %d unknowns, %d steps, %d grid points", n, N, len(grid))
    hist = all_at_once(freq_solve, samples, scheme, cfg.dt, N, steps=steps, oversampling=cfg.oversampling)
    total = np.array([hist.values[i, n:] + wave.value(grid, cfg.dt * st) for i, st in enumerate(steps)])
    u = hist.values[:, :disc.n_u]
    th = hist.values[:, disc.n_u:disc.n_u + disc.n_theta]
    return ScatteringResult(times=cfg.dt * steps, grid_points=grid, total_field=total, u=u, theta=th,
                            dof_coordinates=disc.sp.dof_coordinates, history=hist, wave=wave)


def write_snapshots(result: ScatteringResult, outdir) -> list[Path]:
    outdir = Path(outdir)
    written = []
    for i, t in enumerate(result.times):
        tag = f"{t:g}"
        p = outdir / f"snap_{tag}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x", "y", "re", "im"))
            for (x, y), v in zip(result.grid_points, result.total_field[i]):
                w.writerow((_fmt(x), _fmt(y), _fmt(float(np.real(v))), _fmt(float(np.imag(v)))))
        q = outdir / f"solid_{tag}.csv"
        with open(q, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x", "y", "ux", "uy", "theta"))
            u = result.u[i]
            for d, (x, y) in enumerate(result.dof_coordinates):
                w.writerow(tuple(_fmt(float(v)) for v in (x, y, u[2 * d], u[2 * d + 1], result.theta[i][d])))
        written += [p, q]
    return written
