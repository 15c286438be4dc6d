"""Galerkin boundary element matrices for the 2D operator -Delta + (s/c)^2.

Kernel: G(x, y) = K0(kappa |x - y|) / (2 pi) with kappa = s / c.  Conventions
(n points out of the solid):

* exterior Dirichlet trace of the double layer is (1/2 + K) phi;
* exterior fields are represented as v = D(s) phi - S(s) lambda;
* W is assembled through the tangential integration-by-parts identity
  <W phi, psi> = int int G [dphi/dt dpsi/dt + kappa^2 (n_x . n_y) phi psi].

Trial/test pairings: V is X_h x X_h, K maps Y_h into the dual of X_h (M2 x M1),
K' = K^T (M1 x M2) and W is Y_h x Y_h.

Singular panel pairs use a geometrically graded rule in the singular direction
whose innermost cell splits off the logarithm and integrates it with log-weighted
Gauss rules.  The rule does not depend on s, so the discrete operators remain
analytic functions of s (needed by convolution quadrature).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import iv, kve

from .fem_space import FESpace, eval_basis_1d
from .mesh import BoundaryMesh
from .quadrature import gauss01, log_gauss01

log = logging.getLogger(__name__)

_CHUNK_POINTS = 400_000


def bessel_k(nu: int, z):
    """K_nu(z) via the scaled function; scipy's kv is unreliable for large
    complex arguments near the underflow threshold."""
    return kve(nu, z) * np.exp(-z)


class BEMError(ValueError):
    pass


def kernel(s: complex, c: float, x, y) -> np.ndarray:
    """Fundamental solution K0((s/c)|x-y|)/(2 pi) = (i/4) H0^(1)(i (s/c) |x-y|)."""
    s = complex(s)
    if s == 0:
        raise BEMError("the kernel is not defined for s = 0")
    if s.real < 0:
        raise BEMError("Re s must be nonnegative")
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise BEMError("kernel evaluated at coincident points")
    return bessel_k(0, (s / c) * r) / (2 * np.pi)


# -- discrete spaces ---------------------------------------------------------------


@lru_cache(maxsize=None)
def _x_nodes(k: int) -> np.ndarray:
    if k == 1:
        return np.array([0.5])
    return gauss01(k)[0]


def eval_x_basis(k: int, t) -> np.ndarray:
    """Discontinuous P_{k-1} Lagrange basis at the k Gauss points, shape t.shape + (k,)."""
    t = np.asarray(t, dtype=float)
    nodes = _x_nodes(k)
    out = np.ones(t.shape + (k,))
    for a in range(k):
        for b in range(k):
            if a != b:
                out[..., a] *= (t - nodes[b]) / (nodes[a] - nodes[b])
    return out


@dataclass(frozen=True)
class BoundarySpaces:
    """Y_h (continuous P_k) and X_h (discontinuous P_{k-1}) on the panels."""

    boundary: BoundaryMesh
    degree: int
    y_dofs: np.ndarray  # (np, k+1) Y_h indices in order along each panel
    fe_dofs: np.ndarray | None = None  # (M1,) scalar FE DOF behind each Y_h DOF
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def M1(self) -> int:
        return int(self.y_dofs.max()) + 1

    @property
    def M2(self) -> int:
        return self.degree * self.boundary.n_panels

    @property
    def x_dofs(self) -> np.ndarray:
        k = self.degree
        return np.arange(self.M2).reshape(-1, k)

    def y_basis(self, t):
        return eval_basis_1d(self.degree, t)

    def x_basis(self, t):
        return eval_x_basis(self.degree, t)

    def mass_xy(self) -> np.ndarray:
        """Dense M2 x M1 matrix <phi_j, eta_i> (phi_j in Y_h, eta_i in X_h)."""
        if "mass_xy" not in self._cache:
            t, w = gauss01(self.degree + 2)
            phi, _ = self.y_basis(t)
            eta = self.x_basis(t)
            loc = np.einsum("q,qa,qb->ab", w, eta, phi)
            M = np.zeros((self.M2, self.M1))
            L = self.boundary.lengths
            for p in range(self.boundary.n_panels):
                M[np.ix_(self.x_dofs[p], self.y_dofs[p])] += L[p] * loc
            self._cache["mass_xy"] = M
        return self._cache["mass_xy"]

    def y_interpolate(self, f) -> np.ndarray:
        """Nodal interpolant in Y_h of f(points (n, 2))."""
        k = self.degree
        b = self.boundary
        t = np.linspace(0.0, 1.0, k + 1)
        pts = b.start[:, None, :] + t[None, :, None] * (b.end - b.start)[:, None, :]
        out = np.zeros(self.M1, dtype=complex)
        out[self.y_dofs.ravel()] = f(pts.reshape(-1, 2))
        return out

    def x_project(self, f) -> np.ndarray:
        """L2 projection onto X_h of f(points (n, 2), normals (n, 2))."""
        k = self.degree
        b = self.boundary
        t, w = gauss01(k + 4)
        eta = self.x_basis(t)
        pts = b.start[:, None, :] + t[None, :, None] * (b.end - b.start)[:, None, :]
        nrm = np.broadcast_to(b.normals[:, None, :], pts.shape)
        vals = np.asarray(f(pts.reshape(-1, 2), nrm.reshape(-1, 2))).reshape(len(b.lengths), -1)
        rhs = np.einsum("q,pq,qa->pa", w, vals, eta)
        gram = np.einsum("q,qa,qb->ab", w, eta, eta)
        return np.linalg.solve(gram, rhs.T).T.ravel()


def _compress(ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(ids.ravel(), return_inverse=True)
    return uniq, inv.reshape(ids.shape)


def boundary_spaces(boundary: BoundaryMesh, k: int) -> BoundarySpaces:
    """Boundary spaces on a standalone panel mesh."""
    if k < 1:
        raise BEMError("boundary element degree must be >= 1")
    npan = boundary.n_panels
    nvert = int(boundary.vertex_ids.max()) + 1
    inner = nvert + np.arange(npan)[:, None] * (k - 1) + np.arange(k - 1)[None, :]
    ids = np.column_stack([boundary.vertex_ids[:, 0], inner, boundary.vertex_ids[:, 1]])
    _, y = _compress(ids)
    return BoundarySpaces(boundary=boundary, degree=k, y_dofs=y)


def boundary_spaces_from_fe(sp: FESpace) -> BoundarySpaces:
    """Boundary spaces whose Y_h is the trace of the volume space ``sp``."""
    fe, y = _compress(sp.boundary_dofs)
    return BoundarySpaces(boundary=sp.boundary, degree=sp.degree, y_dofs=y, fe_dofs=fe)


# -- quadrature for panel pairs ------------------------------------------------------


@dataclass(frozen=True)
class BEMQuadrature:
    """Point counts of the panel-pair rules.

    Regular pairs are tiered by the ratio of their distance to the larger panel
    length: below ``near_ratio`` they get ``n_near`` Gauss points per direction,
    below ``far_ratio`` ``n_mid`` points and ``n_far`` beyond.
    """

    n_near: int = 10
    n_mid: int = 4
    n_far: int = 3
    n_sing: int = 10
    n_trans: int = 14
    grading_levels: int = 8
    grading_ratio: float = 0.3
    near_ratio: float = 3.0
    far_ratio: float = 10.0

    @classmethod
    def for_degree(cls, k: int) -> "BEMQuadrature":
        return cls(n_near=max(10, k + 6), n_mid=k + 3, n_far=k + 2, n_trans=max(14, k + 8))


@lru_cache(maxsize=None)
def _graded_rule(n: int, levels: int, ratio: float):
    """Rule for int_0^1 [A(x) log x + C(x)] dx written as sum w (cf f + cA A),
    where f = A log x + C is the full integrand."""
    xg, wg = gauss01(n)
    xl, wl = log_gauss01(n)
    a = ratio**levels
    xs, ws, cf, ca = [a * xg], [a * wg], [np.ones(n)], [-np.log(a * xg) + np.log(a)]
    xs.append(a * xl)
    ws.append(a * wl)
    cf.append(np.zeros(n))
    ca.append(-np.ones(n))
    lo = a
    for _ in range(levels):
        hi = lo / ratio
        xs.append(lo + (hi - lo) * xg)
        ws.append((hi - lo) * wg)
        cf.append(np.ones(n))
        ca.append(np.zeros(n))
        lo = hi
    return tuple(np.concatenate(v) for v in (xs, ws, cf, ca))


@lru_cache(maxsize=None)
def _self_rule(q: BEMQuadrature):
    u, wu, cf, ca = _graded_rule(q.n_sing, q.grading_levels, q.grading_ratio)
    v, wv = gauss01(q.n_trans)
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu * (1 - u), wv).ravel()
    CF = np.repeat(cf, len(v))
    CA = np.repeat(ca, len(v))
    t = (U + (1 - U) * V).ravel()
    tau = ((1 - U) * V).ravel()
    return (np.concatenate([t, tau]), np.concatenate([tau, t]), np.concatenate([W, W]),
            np.concatenate([CF, CF]), np.concatenate([CA, CA]))


@lru_cache(maxsize=None)
def _vertex_rule(q: BEMQuadrature):
    """(p, q) distances from the shared vertex along test/trial panel."""
    x, wx, cf, ca = _graded_rule(q.n_sing, q.grading_levels, q.grading_ratio)
    e, we = gauss01(q.n_trans)
    X, E = np.meshgrid(x, e, indexing="ij")
    W = (np.outer(wx * x, we)).ravel()
    CF = np.repeat(cf, len(e))
    CA = np.repeat(ca, len(e))
    p1, q1 = X.ravel(), (X * E).ravel()
    return (np.concatenate([p1, q1]), np.concatenate([q1, p1]), np.concatenate([W, W]),
            np.concatenate([CF, CF]), np.concatenate([CA, CA]))


@lru_cache(maxsize=None)
def _tensor_rule(n: int):
    x, w = gauss01(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return X.ravel(), Y.ravel(), np.outer(w, w).ravel()


def _segment_distance(b: BoundaryMesh, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    def pt_seg(p, a, c):
        d = c - a
        t = np.clip(np.einsum("ni,ni->n", p - a, d) / np.einsum("ni,ni->n", d, d), 0, 1)
        return np.linalg.norm(p - a - t[:, None] * d, axis=1)

    si, ei, sj, ej = b.start[i], b.end[i], b.start[j], b.end[j]
    return np.min(np.stack([pt_seg(si, sj, ej), pt_seg(ei, sj, ej), pt_seg(sj, si, ei),
                            pt_seg(ej, si, ei)]), axis=0)


def _congruence_classes(a: np.ndarray, b: np.ndarray, scale: float):
    """Group pairs of edge vectors (a, b) emanating from a common point up to rigid motion."""
    inv = np.column_stack([
        np.einsum("ni,ni->n", a, a), np.einsum("ni,ni->n", b, b),
        np.einsum("ni,ni->n", a, b), a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
    ]) / scale**2
    key = np.round(inv, 11)
    _, rep, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return rep, inverse.ravel()


@dataclass(frozen=True)
class CalderonMatrices:
    V: np.ndarray | None
    K: np.ndarray | None
    W: np.ndarray | None
    s: complex
    c: float = 1.0

    @property
    def Kp(self) -> np.ndarray | None:
        return None if self.K is None else self.K.T


def _points(b: BoundaryMesh, I, J, t, tau):
    x = b.start[I][:, None, :] + t[None, :, None] * (b.end - b.start)[I][:, None, :]
    y = b.start[J][:, None, :] + tau[None, :, None] * (b.end - b.start)[J][:, None, :]
    d = x - y
    return d, np.sqrt(np.einsum("pqi,pqi->pq", d, d))


def _flat_index(rows: np.ndarray, cols: np.ndarray, ncols: int) -> np.ndarray:
    return (rows[:, :, None] * ncols + cols[:, None, :]).ravel()


def _outer_basis(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, :, None] * B[:, None, :]).reshape(len(A), -1)


@dataclass
class _SingularGroup:
    test: np.ndarray
    trial: np.ndarray
    rule: tuple  # (t, tau, w, cf, ca)
    rep: np.ndarray  # representatives of congruent pairs
    inverse: np.ndarray


@dataclass
class _RegularBlock:
    """Unordered panel pairs (I < J) sharing one tensor Gauss rule, with cached geometry."""

    I: np.ndarray
    J: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    r: np.ndarray  # (P, q)
    wl: np.ndarray  # (P, q) weights times L_i L_j / (2 pi)
    geo_ij: np.ndarray  # (x - y) . n_J / r^2
    geo_ji: np.ndarray  # (y - x) . n_I / r^2


class CalderonAssembler:
    """Geometry-dependent data for repeated assembly of V, K, W at many frequencies."""

    def __init__(self, bs: BoundarySpaces, quad: BEMQuadrature | None = None):
        self.bs = bs
        self.quad = q = quad or BEMQuadrature.for_degree(bs.degree)
        b = bs.boundary
        npan = b.n_panels
        vid = b.vertex_ids
        I, J = np.meshgrid(np.arange(npan), np.arange(npan), indexing="ij")
        I, J = I.ravel(), J.ravel()
        selfm = I == J
        end_start = (vid[I, 1] == vid[J, 0]) & ~selfm
        start_end = (vid[I, 0] == vid[J, 1]) & ~selfm & ~end_start
        clash = ~selfm & ~end_start & ~start_end & ((vid[I, 0] == vid[J, 0]) | (vid[I, 1] == vid[J, 1]))
        if np.any(clash):
            raise BEMError("inconsistently oriented panels share a vertex")

        d = b.end - b.start
        h = b.h
        pv, qv, w, cf, ca = _vertex_rule(q)
        Ia, Ja = I[end_start], J[end_start]
        Ib, Jb = I[start_end], J[start_end]
        Is = np.arange(npan)
        self.singular = [
            _SingularGroup(Is, Is, _self_rule(q), *_congruence_classes(d, d, h)),
            # shared vertex = end of test panel and start of trial panel
            _SingularGroup(Ia, Ja, (1 - pv, qv, w, cf, ca), *_congruence_classes(-d[Ia], d[Ja], h)),
            _SingularGroup(Ib, Jb, (pv, 1 - qv, w, cf, ca), *_congruence_classes(d[Ib], -d[Jb], h)),
        ]
        self.singular = [g for g in self.singular if len(g.test)]

        regular = ~(selfm | end_start | start_end) & (I < J)
        Ir, Jr = I[regular], J[regular]
        ratio = _segment_distance(b, Ir, Jr) / np.maximum(b.lengths[Ir], b.lengths[Jr])
        tiers = ((ratio < q.near_ratio, q.n_near),
                 ((ratio >= q.near_ratio) & (ratio < q.far_ratio), q.n_mid),
                 (ratio >= q.far_ratio, q.n_far))
        self.regular: list[_RegularBlock] = []
        for mask, n in tiers:
            t, tau, wq = _tensor_rule(n)
            step = max(1, _CHUNK_POINTS // len(t))
            Im, Jm = Ir[mask], Jr[mask]
            for lo in range(0, len(Im), step):
                Ic, Jc = Im[lo:lo + step], Jm[lo:lo + step]
                dd, r = _points(b, Ic, Jc, t, tau)
                wl = (b.lengths[Ic] * b.lengths[Jc])[:, None] * wq[None, :] / (2 * np.pi)
                geo_ij = np.einsum("pqi,pi->pq", dd, b.normals[Jc]) / r**2
                geo_ji = -np.einsum("pqi,pi->pq", dd, b.normals[Ic]) / r**2
                self.regular.append(_RegularBlock(Ic, Jc, t, tau, r, wl, geo_ij, geo_ji))
        log.debug("BEM assembler: %d panels, %d regular blocks, %d singular classes", npan,
                  len(self.regular), sum(len(g.rep) for g in self.singular))

    def assemble(self, s: complex, c: float = 1.0, which: str = "VKW") -> CalderonMatrices:
        s = complex(s)
        if s == 0 or s.real < 0:
            raise BEMError(f"invalid frequency s = {s}")
        kappa = s / c
        bs = self.bs
        b = bs.boundary
        M1, M2 = bs.M1, bs.M2
        L, nrm = b.lengths, b.normals
        xd, yd = bs.x_dofs, bs.y_dofs
        need_v, need_k, need_w = "V" in which, "K" in which, "W" in which
        V = np.zeros(M2 * M2, dtype=complex) if need_v else None
        K = np.zeros(M2 * M1, dtype=complex) if need_k else None
        W = np.zeros(M1 * M1, dtype=complex) if need_w else None
        k = bs.degree
        nx, ny = k, k + 1

        for grp in self.singular:
            t, tau, w, cf, ca = grp.rule
            Ir, Jr = grp.test[grp.rep], grp.trial[grp.rep]
            dd, r = _points(b, Ir, Jr, t, tau)
            z = kappa * r
            wl = (L[Ir] * L[Jr])[:, None] * w[None, :] / (2 * np.pi)
            cam = ca != 0
            X_t, X_tau = bs.x_basis(t), bs.x_basis(tau)
            Y_t, dY_t = bs.y_basis(t)
            Y_tau, dY_tau = bs.y_basis(tau)
            I, J, inv = grp.test, grp.trial, grp.inverse
            if need_v or need_w:
                g = cf * bessel_k(0, z)
                g[:, cam] -= ca[cam] * iv(0, z[:, cam])
                g *= wl
                if need_v:
                    loc = np.einsum("pq,qa,qb->pab", g, X_t, X_tau)
                    _scatter(V, _flat_index(xd[I], xd[J], M2), loc[inv])
                if need_w:
                    loc = self._w_local(g, kappa, Ir, Jr, Y_t, dY_t, Y_tau, dY_tau)
                    _scatter(W, _flat_index(yd[I], yd[J], M1), loc[inv])
            if need_k:
                geo = np.einsum("pqi,pi->pq", dd, nrm[Jr]) / (r * r)
                dk = cf * (z * bessel_k(1, z))
                dk[:, cam] += ca[cam] * z[:, cam] * iv(1, z[:, cam])
                dk *= geo * wl
                loc = np.einsum("pq,qa,qb->pab", dk, X_t, Y_tau)
                _scatter(K, _flat_index(xd[I], yd[J], M1), loc[inv])

        for blk in self.regular:
            I, J = blk.I, blk.J
            z = kappa * blk.r
            X_t, X_tau = bs.x_basis(blk.t), bs.x_basis(blk.tau)
            Y_t, dY_t = bs.y_basis(blk.t)
            Y_tau, dY_tau = bs.y_basis(blk.tau)
            if need_v or need_w:
                g = bessel_k(0, z) * blk.wl
                if need_v:
                    loc = (g @ _outer_basis(X_t, X_tau)).reshape(-1, nx, nx)
                    _scatter(V, _flat_index(xd[I], xd[J], M2), loc)
                    _scatter(V, _flat_index(xd[J], xd[I], M2), loc.transpose(0, 2, 1))
                if need_w:
                    loc = ((g @ _outer_basis(dY_t, dY_tau)).reshape(-1, ny, ny) / (L[I] * L[J])[:, None, None]
                           + (kappa**2 * np.einsum("pi,pi->p", nrm[I], nrm[J]))[:, None, None]
                           * (g @ _outer_basis(Y_t, Y_tau)).reshape(-1, ny, ny))
                    _scatter(W, _flat_index(yd[I], yd[J], M1), loc)
                    _scatter(W, _flat_index(yd[J], yd[I], M1), loc.transpose(0, 2, 1))
            if need_k:
                base = z * bessel_k(1, z) * blk.wl
                loc = ((base * blk.geo_ij) @ _outer_basis(X_t, Y_tau)).reshape(-1, nx, ny)
                _scatter(K, _flat_index(xd[I], yd[J], M1), loc)
                loc = ((base * blk.geo_ji) @ _outer_basis(X_tau, Y_t)).reshape(-1, nx, ny)
                _scatter(K, _flat_index(xd[J], yd[I], M1), loc)

        res = CalderonMatrices(
            V=None if V is None else V.reshape(M2, M2),
            K=None if K is None else K.reshape(M2, M1),
            W=None if W is None else W.reshape(M1, M1),
            s=s,
            c=c,
        )
        for name in which:
            m = getattr(res, name)
            if not np.all(np.isfinite(m)):
                raise BEMError(f"non-finite entries in {name} at s = {s}")
        return res

    def _w_local(self, g, kappa, I, J, Y_t, dY_t, Y_tau, dY_tau):
        b = self.bs.boundary
        L, nrm = b.lengths, b.normals
        loc = np.einsum("pq,qa,qb->pab", g, dY_t, dY_tau) / (L[I] * L[J])[:, None, None]
        nn = np.einsum("pi,pi->p", nrm[I], nrm[J])
        return loc + (kappa**2 * nn)[:, None, None] * np.einsum("pq,qa,qb->pab", g, Y_t, Y_tau)



def _scatter(target: np.ndarray, idx: np.ndarray, loc: np.ndarray):
    n = target.size
    target += np.bincount(idx, loc.real.ravel(), minlength=n) + 1j * np.bincount(idx, loc.imag.ravel(), minlength=n)


def calderon_assembler(bs: BoundarySpaces, quad: BEMQuadrature | None = None) -> CalderonAssembler:
    """Assembler cached on ``bs``."""
    key = ("assembler", quad)
    if key not in bs._cache:
        bs._cache[key] = CalderonAssembler(bs, quad)
    return bs._cache[key]


def assemble_calderon(s: complex, bs: BoundarySpaces, c: float = 1.0, *, which: str = "VKW",
                      quad: BEMQuadrature | None = None) -> CalderonMatrices:
    """Assemble the requested operators (subset of "VKW") in one pass."""
    return calderon_assembler(bs, quad).assemble(s, c, which)


def assemble_V(s: complex, bs: BoundarySpaces, c: float = 1.0, quad=None) -> np.ndarray:
    return assemble_calderon(s, bs, c, which="V", quad=quad).V


def assemble_K(s: complex, bs: BoundarySpaces, c: float = 1.0, quad=None) -> np.ndarray:
    return assemble_calderon(s, bs, c, which="K", quad=quad).K


def assemble_Kp(s: complex, bs: BoundarySpaces, c: float = 1.0, quad=None) -> np.ndarray:
    return assemble_K(s, bs, c, quad).T


def assemble_W(s: complex, bs: BoundarySpaces, c: float = 1.0, quad=None) -> np.ndarray:
    return assemble_calderon(s, bs, c, which="W", quad=quad).W


# -- potentials -------------------------------------------------------------------------


def eval_potentials(s: complex, bs: BoundarySpaces, phi, lam, pts, c: float = 1.0,
                    n_gauss: int = 16, n_sub: int = 8) -> np.ndarray:
    """Evaluate D(s) phi - S(s) lambda at points off the boundary.

    Panels closer than two panel lengths to a point are integrated with a
    composite rule of ``n_sub`` sub-panels.
    """
    s = complex(s)
    if s == 0 or s.real < 0:
        raise BEMError(f"invalid frequency s = {s}")
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    b = bs.boundary
    if np.any(b.distance(pts) <= 1e-10 * b.h):
        raise BEMError("evaluation point lies on the boundary")
    phi = np.asarray(phi, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    kappa = s / c
    out = np.zeros(len(pts), dtype=complex)
    dist = np.linalg.norm(pts[:, None, :] - b.midpoints[None, :, :], axis=2)
    close = dist < 2.0 * b.lengths[None, :]
    # regular rule on all pairs (close pairs masked out), composite rule on close pairs only
    tg, wg = gauss01(n_gauss)
    phi_q, lam_q, y = _densities_at(bs, phi, lam, tg)
    step = max(1, _CHUNK_POINTS // (b.n_panels * len(tg)))
    for lo in range(0, len(pts), step):
        d = pts[lo:lo + step, None, None, :] - y[None]
        vals = _potential_integrand(kappa, d, b.normals[None], phi_q[None], lam_q[None])
        vals = (vals * (wg[None, None, :] * b.lengths[None, :, None])).sum(axis=2)
        out[lo:lo + step] += np.where(close[lo:lo + step], 0.0, vals).sum(axis=1)
    P, Q = np.nonzero(close)
    if len(P):
        tc = ((np.arange(n_sub)[:, None] + tg[None, :]) / n_sub).ravel()
        wc = np.tile(wg / n_sub, n_sub)
        phi_c, lam_c, yc = _densities_at(bs, phi, lam, tc)
        d = pts[P][:, None, :] - yc[Q]
        vals = _potential_integrand(kappa, d, b.normals[Q], phi_c[Q], lam_c[Q])
        np.add.at(out, P, (vals * wc[None, :]).sum(axis=1) * b.lengths[Q])
    return out


def _densities_at(bs: BoundarySpaces, phi, lam, t):
    """phi and lambda at parameters t on every panel, and the points themselves."""
    b = bs.boundary
    yb, _ = bs.y_basis(t)
    xb = bs.x_basis(t)
    phi_q = np.einsum("qa,pa->pq", yb, phi[bs.y_dofs])
    lam_q = np.einsum("qa,pa->pq", xb, lam[bs.x_dofs])
    y = b.start[:, None, :] + t[None, :, None] * (b.end - b.start)[:, None, :]
    return phi_q, lam_q, y


def _potential_integrand(kappa, d, normals, phi_q, lam_q):
    """dG/dn_y phi - G lambda for offsets d = x - y of shape (..., nq, 2)."""
    r = np.linalg.norm(d, axis=-1)
    z = kappa * r
    G = bessel_k(0, z) / (2 * np.pi)
    dG = bessel_k(1, z) * kappa * np.einsum("...qi,...i->...q", d, normals) / r / (2 * np.pi)
    return dG * phi_q - G * lam_q
