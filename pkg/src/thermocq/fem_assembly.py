"""Volume matrices of the thermoelastic finite element block.

All coefficient fields are plain callables of ``(x, y)`` evaluated at
quadrature points.  Scalar fields return arrays; tensor fields return arrays
with a trailing (2, 2) axis (see :func:`tensor_field`).  Plain numbers are
accepted for constant fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp_

from .fem_space import FESpace, eval_basis
from .quadrature import triangle_rule

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
TensorField = Callable[[np.ndarray, np.ndarray], np.ndarray]

_CHUNK = 2048


class MaterialError(ValueError):
    """A coefficient violates its admissibility constraint at a quadrature point."""


def tensor_field(t11, t22, t12) -> TensorField:
    """Symmetric tensor field from its Voigt components (11, 22, 12)."""

    def field(x, y):
        a = np.broadcast_to(_as_field(t11)(x, y), x.shape)
        b = np.broadcast_to(_as_field(t22)(x, y), x.shape)
        c = np.broadcast_to(_as_field(t12)(x, y), x.shape)
        return np.stack([np.stack([a, c], -1), np.stack([c, b], -1)], -2)

    return field


def _as_field(f):
    if callable(f):
        return f
    value = float(f)
    return lambda x, y: np.full(np.shape(x), value)


def _as_tensor(f):
    if callable(f):
        return f
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(2)
    return lambda x, y: np.broadcast_to(arr, np.shape(x) + (2, 2))


@dataclass(frozen=True)
class MaterialModel:
    rho_solid: ScalarField
    lame_lambda: ScalarField
    lame_mu: ScalarField
    zeta: TensorField
    kappa: TensorField
    eta: TensorField
    rho_fluid: float = 1.0
    sound_speed: float = 1.0

    def __post_init__(self):
        for name in ("rho_solid", "lame_lambda", "lame_mu"):
            object.__setattr__(self, name, _as_field(getattr(self, name)))
        for name in ("zeta", "kappa", "eta"):
            object.__setattr__(self, name, _as_tensor(getattr(self, name)))
        if not self.rho_fluid >= 0.0:
            raise MaterialError("fluid density must be nonnegative")
        if not self.sound_speed > 0.0:
            raise MaterialError("sound speed must be positive")


def benchmark_material(rho_solid: ScalarField | None = None, rho_fluid: float = 1.0,
                   sound_speed: float = 1.0) -> MaterialModel:
    """Variable coefficients used in the convergence experiments."""
    return MaterialModel(
        rho_solid=rho_solid or (lambda x, y: 5.0 + np.sin(x) * np.sin(y)),
        lame_lambda=2.0,
        lame_mu=3.0,
        zeta=tensor_field(lambda x, y: np.sin(x) + np.cos(y), lambda x, y: -np.sin(y),
                          lambda x, y: np.cos(x)),
        kappa=tensor_field(lambda x, y: 10.0 + x**2, lambda x, y: 10.0 + y, 0.0),
        eta=tensor_field(1.0, lambda x, y: x + y, lambda x, y: 5.0 + x + y),
        rho_fluid=rho_fluid,
        sound_speed=sound_speed,
    )


MATERIAL_PRESETS = {
    "benchmark": lambda: benchmark_material(),
    "pentagon": lambda: benchmark_material(lambda x, y: 15.0 + 40.0 * np.exp(-49.0 * (x**2 + y**2))),
    "trapping": lambda: benchmark_material(lambda x, y: 20.0 + np.abs(x) + np.abs(y)),
    "unit": lambda: MaterialModel(1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class VolumeQuadrature:
    """Quadrature data on every element: physical points and det-weighted weights."""

    ref_points: np.ndarray  # (nq, 2)
    points: np.ndarray  # (nt, nq, 2)
    wdet: np.ndarray  # (nt, nq)

    @property
    def x(self) -> np.ndarray:
        return self.points[..., 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[..., 1]


def default_order(k: int) -> int:
    return 2 * k + 2


def volume_quadrature(sp: FESpace, order: int | None = None) -> VolumeQuadrature:
    rule = triangle_rule(order or default_order(sp.degree))
    geo = sp.geometry
    return VolumeQuadrature(
        ref_points=rule.points,
        points=geo.map(rule.points),
        wdet=np.abs(geo.det)[:, None] * rule.weights[None, :],
    )


def _chunks(n: int):
    for start in range(0, n, _CHUNK):
        yield slice(start, min(n, start + _CHUNK))


def _vector_dofs(sp: FESpace, sl=slice(None)) -> np.ndarray:
    d = sp.element_dofs[sl]
    return np.stack([2 * d, 2 * d + 1], axis=-1).reshape(len(d), -1)


def _scatter(rows, cols, vals, shape) -> sp_.csr_matrix:
    r = np.broadcast_to(rows[:, :, None], vals.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], vals.shape).ravel()
    return sp_.csr_matrix((vals.ravel(), (r, c)), shape=shape)


def _check_mesh(a: FESpace, b: FESpace):
    if a.mesh is not b.mesh and not (
        a.mesh.triangles.shape == b.mesh.triangles.shape
        and np.array_equal(a.mesh.triangles, b.mesh.triangles)
        and np.array_equal(a.mesh.vertices, b.mesh.vertices)
    ):
        raise ValueError("finite element spaces live on different meshes")


def _strain_matrix(grads: np.ndarray) -> np.ndarray:
    """Voigt strain (e11, e22, 2 e12) of vector basis functions.

    grads: (..., nb, 2) scalar basis gradients -> (..., 3, 2 nb) with
    vector local index 2 b + c.
    """
    shape = grads.shape[:-2]
    nb = grads.shape[-2]
    B = np.zeros(shape + (3, nb, 2))
    gx, gy = grads[..., 0], grads[..., 1]
    B[..., 0, :, 0] = gx
    B[..., 2, :, 0] = gy
    B[..., 1, :, 1] = gy
    B[..., 2, :, 1] = gx
    return B.reshape(shape + (3, 2 * nb))


def assemble_scalar_mass(sp: FESpace, coef=1.0, order: int | None = None) -> sp_.csr_matrix:
    coef = _as_field(coef)
    q = volume_quadrature(sp, order)
    phi, _ = eval_basis(sp.degree, q.ref_points)
    w = q.wdet * coef(q.x, q.y)
    loc = np.einsum("tq,qa,qb->tab", w, phi, phi)
    d = sp.element_dofs
    return _scatter(d, d, loc, (sp.ndof, sp.ndof))


def assemble_vector_mass(sp: FESpace, rho, order: int | None = None) -> sp_.csr_matrix:
    """Matrix of (rho u, v) on the interleaved vector space."""
    rho = _as_field(rho)
    q = volume_quadrature(sp, order)
    r = rho(q.x, q.y)
    if np.any(r <= 0):
        raise MaterialError("solid density must be positive at every quadrature point")
    phi, _ = eval_basis(sp.degree, q.ref_points)
    loc = np.einsum("tq,qa,qb->tab", q.wdet * r, phi, phi)
    nt, nb, _ = loc.shape
    vec = np.zeros((nt, nb, 2, nb, 2))
    vec[:, :, 0, :, 0] = loc
    vec[:, :, 1, :, 1] = loc
    vec = vec.reshape(nt, 2 * nb, 2 * nb)
    d = _vector_dofs(sp)
    return _scatter(d, d, vec, (2 * sp.ndof, 2 * sp.ndof))


def assemble_elastic_stiffness(sp: FESpace, lam, mu, order: int | None = None) -> sp_.csr_matrix:
    """Matrix of (C eps(u), eps(v)) for the isotropic Hooke tensor."""
    lam, mu = _as_field(lam), _as_field(mu)
    q = volume_quadrature(sp, order)
    L, M = lam(q.x, q.y), mu(q.x, q.y)
    if np.any(M <= 0) or np.any(3 * L + 2 * M <= 0):
        raise MaterialError("Lame parameters must satisfy mu > 0 and 3 lambda + 2 mu > 0")
    _, dphi = eval_basis(sp.degree, q.ref_points)
    D = np.zeros(L.shape + (3, 3))
    D[..., 0, 0] = D[..., 1, 1] = L + 2 * M
    D[..., 0, 1] = D[..., 1, 0] = L
    D[..., 2, 2] = M
    vals = []
    for sl in _chunks(sp.mesh.n_triangles):
        B = _strain_matrix(_grads(sp, dphi, sl))
        vals.append(np.einsum("tq,tqia,tqij,tqjb->tab", q.wdet[sl], B, D[sl], B, optimize=True))
    d = _vector_dofs(sp)
    return _scatter(d, d, np.concatenate(vals), (2 * sp.ndof, 2 * sp.ndof))


def _grads(sp: FESpace, dphi: np.ndarray, sl: slice) -> np.ndarray:
    return np.einsum("tij,qbj->tqbi", sp.geometry.inv_t[sl], dphi)


def assemble_thermal_stiffness(sp: FESpace, kappa, order: int | None = None) -> sp_.csr_matrix:
    """Matrix of (kappa grad theta, grad v)."""
    kappa = _as_tensor(kappa)
    q = volume_quadrature(sp, order)
    K = kappa(q.x, q.y)
    detk = K[..., 0, 0] * K[..., 1, 1] - K[..., 0, 1] * K[..., 1, 0]
    if np.any(K[..., 0, 0] <= 0) or np.any(detk <= 0):
        raise MaterialError("thermal diffusivity tensor must be positive definite")
    _, dphi = eval_basis(sp.degree, q.ref_points)
    vals = []
    for sl in _chunks(sp.mesh.n_triangles):
        g = _grads(sp, dphi, sl)
        vals.append(np.einsum("tq,tqai,tqij,tqbj->tab", q.wdet[sl], g, K[sl], g, optimize=True))
    d = sp.element_dofs
    return _scatter(d, d, np.concatenate(vals), (sp.ndof, sp.ndof))


def assemble_coupling_zeta(sp_theta: FESpace, sp_u: FESpace, zeta, order: int | None = None) -> sp_.csr_matrix:
    """Matrix with entry (i, j) = int (zeta : eps(v_i)) theta_j, v_i vector, theta_j scalar."""
    _check_mesh(sp_theta, sp_u)
    zeta = _as_tensor(zeta)
    q = volume_quadrature(sp_u, order or default_order(max(sp_u.degree, sp_theta.degree)))
    Z = zeta(q.x, q.y)
    zv = np.stack([Z[..., 0, 0], Z[..., 1, 1], 0.5 * (Z[..., 0, 1] + Z[..., 1, 0])], axis=-1)
    phi_t, _ = eval_basis(sp_theta.degree, q.ref_points)
    _, dphi_u = eval_basis(sp_u.degree, q.ref_points)
    vals = []
    for sl in _chunks(sp_u.mesh.n_triangles):
        B = _strain_matrix(_grads(sp_u, dphi_u, sl))
        vals.append(np.einsum("tq,tqi,tqia,qb->tab", q.wdet[sl], zv[sl], B, phi_t, optimize=True))
    return _scatter(_vector_dofs(sp_u), sp_theta.element_dofs, np.concatenate(vals),
                    (2 * sp_u.ndof, sp_theta.ndof))


def assemble_coupling_eta(sp_u: FESpace, sp_theta: FESpace, eta, order: int | None = None) -> sp_.csr_matrix:
    """Matrix with entry (i, j) = int (eta u_j) . grad theta_i, theta_i scalar, u_j vector."""
    _check_mesh(sp_theta, sp_u)
    eta = _as_tensor(eta)
    q = volume_quadrature(sp_u, order or default_order(max(sp_u.degree, sp_theta.degree)))
    E = eta(q.x, q.y)
    phi_u, _ = eval_basis(sp_u.degree, q.ref_points)
    _, dphi_t = eval_basis(sp_theta.degree, q.ref_points)
    nbu = len(phi_u[0])
    vals = []
    for sl in _chunks(sp_u.mesh.n_triangles):
        g = _grads(sp_theta, dphi_t, sl)  # (t, q, a, i)
        # (eta e_c phi_b) . grad theta_a = sum_i eta_ic d_i theta_a phi_b
        loc = np.einsum("tq,tqai,tqic,qb->tabc", q.wdet[sl], g, E[sl], phi_u, optimize=True)
        vals.append(loc.reshape(loc.shape[0], loc.shape[1], 2 * nbu))
    return _scatter(sp_theta.element_dofs, _vector_dofs(sp_u), np.concatenate(vals),
                    (sp_theta.ndof, 2 * sp_u.ndof))


@dataclass(frozen=True)
class AssembledFemMatrices:
    M_rho: sp_.csr_matrix
    K_elast: sp_.csr_matrix
    G_zeta: sp_.csr_matrix
    G_eta: sp_.csr_matrix
    M_theta: sp_.csr_matrix
    K_kappa: sp_.csr_matrix

    @property
    def n_u(self) -> int:
        return self.M_rho.shape[0]

    @property
    def n_theta(self) -> int:
        return self.M_theta.shape[0]


def assemble_fem_matrices(sp: FESpace, material: MaterialModel, order: int | None = None) -> AssembledFemMatrices:
    """All six volume matrices; displacement and temperature share ``sp``."""
    return AssembledFemMatrices(
        M_rho=assemble_vector_mass(sp, material.rho_solid, order),
        K_elast=assemble_elastic_stiffness(sp, material.lame_lambda, material.lame_mu, order),
        G_zeta=assemble_coupling_zeta(sp, sp, material.zeta, order),
        G_eta=assemble_coupling_eta(sp, sp, material.eta, order),
        M_theta=assemble_scalar_mass(sp, 1.0, order),
        K_kappa=assemble_thermal_stiffness(sp, material.kappa, order),
    )


def assemble_fem_block(mats: AssembledFemMatrices, s: complex) -> sp_.csc_matrix:
    """FEM(s) = s^2 [[M_rho, 0], [0, 0]] + s [[0, 0], [-G_eta, M_theta]]
    + [[K_elast, -G_zeta], [0, K_kappa]]."""
    s = complex(s)
    top = sp_.hstack([s * s * mats.M_rho + mats.K_elast, -mats.G_zeta])
    bottom = sp_.hstack([-s * mats.G_eta, s * mats.M_theta + mats.K_kappa])
    return sp_.vstack([top, bottom]).tocsc().astype(complex)


# -- load vectors from quadrature-point data -------------------------------------


def load_scalar(sp: FESpace, q: VolumeQuadrature, f: np.ndarray) -> np.ndarray:
    """int f theta_i for f given at the points of ``q`` (nt, nq)."""
    phi, _ = eval_basis(sp.degree, q.ref_points)
    loc = np.einsum("tq,tq,qa->ta", q.wdet, f, phi)
    return _accumulate(sp.element_dofs, loc, sp.ndof)


def load_scalar_grad(sp: FESpace, q: VolumeQuadrature, g: np.ndarray) -> np.ndarray:
    """int g . grad theta_i for g of shape (nt, nq, 2)."""
    _, dphi = eval_basis(sp.degree, q.ref_points)
    loc = np.einsum("tq,tqi,tqai->ta", q.wdet, g, sp.geometry.grads(dphi), optimize=True)
    return _accumulate(sp.element_dofs, loc, sp.ndof)


def load_vector(sp: FESpace, q: VolumeQuadrature, f: np.ndarray) -> np.ndarray:
    """int f . v_i for f of shape (nt, nq, 2) on the interleaved vector space."""
    phi, _ = eval_basis(sp.degree, q.ref_points)
    loc = np.einsum("tq,tqc,qa->tac", q.wdet, f, phi)
    return _accumulate(_vector_dofs(sp), loc.reshape(len(loc), -1), 2 * sp.ndof)


def load_stress(sp: FESpace, q: VolumeQuadrature, sigma: np.ndarray) -> np.ndarray:
    """int sigma : grad v_i for a tensor field sigma (nt, nq, 2, 2) [component, direction]."""
    _, dphi = eval_basis(sp.degree, q.ref_points)
    loc = np.einsum("tq,tqcj,tqaj->tac", q.wdet, sigma, sp.geometry.grads(dphi), optimize=True)
    return _accumulate(_vector_dofs(sp), loc.reshape(len(loc), -1), 2 * sp.ndof)


def _accumulate(dofs: np.ndarray, loc: np.ndarray, n: int) -> np.ndarray:
    flat = dofs.ravel()
    if np.iscomplexobj(loc):
        return (np.bincount(flat, loc.real.ravel(), minlength=n)
                + 1j * np.bincount(flat, loc.imag.ravel(), minlength=n))
    return np.bincount(flat, loc.ravel(), minlength=n)


def hooke_stress(grad_u: np.ndarray, lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """C eps(u) for displacement gradients (..., 2, 2) [component, direction]."""
    eps = 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))
    tr = eps[..., 0, 0] + eps[..., 1, 1]
    return 2 * mu[..., None, None] * eps + (lam * tr)[..., None, None] * np.eye(2)
