"""The coupled FEM-BEM block system at one complex frequency.

Unknown ordering: ``x = (u, theta, phi, lambda)`` with ``u`` interleaved
(component c of scalar DOF d at ``2*d + c``).  With G the trace coupling
matrix, M the Y_h/X_h mass matrix and ``r = rho_f`` the matrix is::

    [ FEM_uu     FEM_ut   s r G^T          0            ]
    [ FEM_tu     FEM_tt   0                0            ]
    [ -s r G     0        r W     -r (M/2 - K)^T        ]
    [ 0          0        r (M/2 - K)      r V          ]

The boundary rows are multiplied by ``rho_f`` so that the two coupling blocks
are exact negatives of each other's transposes.  When ``rho_f = 0`` the
boundary rows are left unscaled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp_
import scipy.sparse.linalg as spla
from scipy.linalg import lu_factor, lu_solve

from .bem import BoundarySpaces, CalderonMatrices
from .fem_space import FESpace, eval_basis_1d
from .quadrature import gauss01

log = logging.getLogger(__name__)

BLOCKS = ("u", "theta", "phi", "lambda")


class SolverError(RuntimeError):
    """Singular or inaccurate factorization."""


# -- boundary coupling and load operators -----------------------------------------------


def _check_same_boundary(sp: FESpace, bs: BoundarySpaces):
    if bs.fe_dofs is None or bs.boundary is not sp.boundary and not (
        bs.boundary.n_panels == sp.boundary.n_panels
        and np.array_equal(bs.boundary.vertex_ids, sp.boundary.vertex_ids)
    ):
        raise ValueError("boundary spaces were not built from this finite element space")


def assemble_trace_coupling(sp_u: FESpace, bs: BoundarySpaces) -> sp_.csr_matrix:
    """G (M1 x 2N) with G[i, 2d + c] = int_Gamma psi_i phi_d n_c."""
    _check_same_boundary(sp_u, bs)
    k = bs.degree
    t, w = gauss01(k + 2)
    Y, _ = eval_basis_1d(k, t)
    loc = np.einsum("q,qa,qb->ab", w, Y, Y)
    b = bs.boundary
    vals = (b.lengths[:, None, None, None] * loc[None, :, :, None] * b.normals[:, None, None, :])
    rows = np.broadcast_to(bs.y_dofs[:, :, None, None], vals.shape)
    cols = 2 * sp_u.boundary_dofs[:, None, :, None] + np.arange(2)[None, None, None, :]
    cols = np.broadcast_to(cols, vals.shape)
    return sp_.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(bs.M1, 2 * sp_u.ndof))


@dataclass(frozen=True)
class BoundaryLoad:
    """Linear maps from samples at boundary quadrature points to load vectors.

    ``normal_u`` (2N x nq) maps g to int_Gamma g (v_i . n); ``y`` (M1 x nq)
    maps g to int_Gamma g psi_i.
    """

    points: np.ndarray  # (nq, 2)
    normals: np.ndarray  # (nq, 2)
    normal_u: sp_.csr_matrix
    y: sp_.csr_matrix


def boundary_load(sp_u: FESpace, bs: BoundarySpaces, n: int | None = None) -> BoundaryLoad:
    _check_same_boundary(sp_u, bs)
    k = bs.degree
    t, w = gauss01(n or k + 4)
    Y, _ = eval_basis_1d(k, t)
    b = bs.boundary
    npan, nq = b.n_panels, len(t)
    pts = b.start[:, None, :] + t[None, :, None] * (b.end - b.start)[:, None, :]
    nrm = np.broadcast_to(b.normals[:, None, :], pts.shape)
    qidx = np.arange(npan * nq).reshape(npan, nq)
    wl = b.lengths[:, None] * w[None, :]  # (np, nq)
    val = wl[:, :, None] * Y[None, :, :]  # (np, nq, k+1)
    rows_y = np.broadcast_to(bs.y_dofs[:, None, :], val.shape)
    cols = np.broadcast_to(qidx[:, :, None], val.shape)
    Py = sp_.csr_matrix((val.ravel(), (rows_y.ravel(), cols.ravel())), shape=(bs.M1, npan * nq))
    valn = val[..., None] * b.normals[:, None, None, :]  # (np, nq, k+1, 2)
    rows_u = 2 * sp_u.boundary_dofs[:, None, :, None] + np.arange(2)
    rows_u = np.broadcast_to(rows_u, valn.shape)
    cols_u = np.broadcast_to(qidx[:, :, None, None], valn.shape)
    Pn = sp_.csr_matrix((valn.ravel(), (rows_u.ravel(), cols_u.ravel())), shape=(2 * sp_u.ndof, npan * nq))
    return BoundaryLoad(points=pts.reshape(-1, 2), normals=nrm.reshape(-1, 2), normal_u=Pn, y=Py)


# -- block system ----------------------------------------------------------------------


@dataclass(frozen=True)
class BlockSystem:
    s: complex
    fem: sp_.csc_matrix  # (N1 + N2) square
    G: sp_.csr_matrix  # (M1, N1)
    calderon: CalderonMatrices
    mass_xy: np.ndarray  # (M2, M1)
    rho_f: float
    n_u: int
    n_theta: int

    @property
    def M1(self) -> int:
        return self.G.shape[0]

    @property
    def M2(self) -> int:
        return self.mass_xy.shape[0]

    @property
    def n_fem(self) -> int:
        return self.n_u + self.n_theta

    @property
    def n_bem(self) -> int:
        return self.M1 + self.M2

    @property
    def shape(self) -> tuple[int, int]:
        n = self.n_fem + self.n_bem
        return (n, n)

    @property
    def bem_scale(self) -> float:
        return self.rho_f if self.rho_f > 0 else 1.0

    def offsets(self) -> dict[str, slice]:
        sizes = (self.n_u, self.n_theta, self.M1, self.M2)
        edges = np.concatenate([[0], np.cumsum(sizes)])
        return {name: slice(int(edges[i]), int(edges[i + 1])) for i, name in enumerate(BLOCKS)}

    def coupling_u_phi(self) -> sp_.csr_matrix:
        return (self.s * self.rho_f) * self.G.T.tocsr()

    def coupling_phi_u(self) -> sp_.csr_matrix:
        return (-self.s * self.bem_scale) * self.G

    def bem_matrix(self) -> np.ndarray:
        C = self.calderon
        r = self.bem_scale
        half = 0.5 * self.mass_xy - C.K
        return r * np.block([[C.W, -half.T], [half, C.V]])

    def coupling_blocks(self) -> tuple[sp_.csr_matrix, sp_.csr_matrix]:
        """A_FB (FEM rows, BEM columns) and A_BF."""
        nb = self.n_bem
        zu = sp_.csr_matrix((self.n_theta, self.M1))
        fb = sp_.vstack([self.coupling_u_phi(), zu])
        fb = sp_.hstack([fb, sp_.csr_matrix((self.n_fem, self.M2))]).tocsr()
        bf = sp_.hstack([self.coupling_phi_u(), sp_.csr_matrix((self.M1, self.n_theta))])
        bf = sp_.vstack([bf, sp_.csr_matrix((self.M2, self.n_fem))]).tocsr()
        assert fb.shape == (self.n_fem, nb) and bf.shape == (nb, self.n_fem)
        return fb, bf

    def matrix(self) -> sp_.csc_matrix:
        fb, bf = self.coupling_blocks()
        bem = sp_.csr_matrix(self.bem_matrix())
        return sp_.bmat([[self.fem, fb], [bf, bem]], format="csc")

    def block(self, row: str, col: str):
        off = self.offsets()
        return self.matrix()[off[row], :][:, off[col]]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        fb, bf = self.coupling_blocks()
        nf = self.n_fem
        xf, xb = x[:nf], x[nf:]
        return np.concatenate([self.fem @ xf + fb @ xb, bf @ xf + self.bem_matrix() @ xb])


def assemble_block_system(s: complex, fem_block, calderon: CalderonMatrices, G, mass_xy,
                          rho_f: float, n_u: int) -> BlockSystem:
    s = complex(s)
    if calderon.s != s:
        raise ValueError("BEM matrices were assembled at a different frequency")
    M1 = G.shape[0]
    M2 = mass_xy.shape[0]
    n_theta = fem_block.shape[0] - n_u
    if G.shape[1] != n_u or mass_xy.shape[1] != M1 or calderon.V.shape != (M2, M2) \
            or calderon.W.shape != (M1, M1) or calderon.K.shape != (M2, M1) or n_theta < 0:
        raise ValueError("block dimensions do not match")
    return BlockSystem(s=s, fem=sp_.csc_matrix(fem_block), G=sp_.csr_matrix(G), calderon=calderon,
                       mass_xy=np.asarray(mass_xy), rho_f=float(rho_f), n_u=n_u, n_theta=n_theta)


# -- right-hand side -------------------------------------------------------------------


@dataclass(frozen=True)
class RhsData:
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray
    d4: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.d1, self.d2, self.d3, self.d4]).astype(complex)

    @classmethod
    def zeros(cls, bsys: BlockSystem) -> "RhsData":
        return cls(*(np.zeros(n, dtype=complex) for n in (bsys.n_u, bsys.n_theta, bsys.M1, bsys.M2)))


def assemble_rhs(s: complex, incident, load: BoundaryLoad, n_theta: int, M2: int, rho_f: float) -> RhsData:
    """Data generated by an incident field.

    ``incident`` provides ``trace(points)`` and ``normal_derivative(points,
    normals)`` of its Laplace transform at ``s``.  Returns
    d1 = -s rho_f <v_inc n, v>, d3 = rho_f <dv_inc/dn, psi> (the boundary rows
    carry the rho_f factor) and d2 = d4 = 0.
    """
    s = complex(s)
    scale = rho_f if rho_f > 0 else 1.0
    vin = np.asarray(incident.trace(load.points), dtype=complex)
    dn = np.asarray(incident.normal_derivative(load.points, load.normals), dtype=complex)
    return RhsData(
        d1=-s * rho_f * (load.normal_u @ vin),
        d2=np.zeros(n_theta, dtype=complex),
        d3=scale * (load.y @ dn),
        d4=np.zeros(M2, dtype=complex),
    )


# -- solvers -----------------------------------------------------------------------------


@dataclass(frozen=True)
class SolutionSplit:
    u: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    lam: np.ndarray

    @classmethod
    def from_vector(cls, x: np.ndarray, bsys: BlockSystem) -> "SolutionSplit":
        off = bsys.offsets()
        return cls(*(x[off[name]] for name in BLOCKS))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.theta, self.phi, self.lam])


def _rhs_vector(rhs) -> np.ndarray:
    return rhs.vector() if isinstance(rhs, RhsData) else np.asarray(rhs, dtype=complex)


def _check_residual(A, x, b, s, tol=1e-10):
    res = np.linalg.norm(A @ x - b)
    normA = sp_.linalg.norm(A) if sp_.issparse(A) else np.linalg.norm(A)
    bound = tol * (normA * np.linalg.norm(x) + np.linalg.norm(b))
    if not np.isfinite(res) or res > bound:
        raise SolverError(f"residual {res:.3e} exceeds {bound:.3e} at s = {s}")


def sparse_lu(A):
    """SuperLU with a minimum-degree ordering of A + A^T and preference for
    diagonal pivots.  The block matrix has a nearly symmetric pattern, so this
    gives much less fill than the default column ordering."""
    return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                     options={"SymmetricMode": True})


class MonolithicSolver:
    """Sparse LU of the whole block matrix (BEM blocks stored as dense entries).

    If the residual check fails after refinement, the matrix is refactored
    with SuperLU's default partial pivoting and the solve is repeated.
    """

    def __init__(self, bsys: BlockSystem):
        self.bsys = bsys
        self.A = bsys.matrix()
        self.robust = False
        try:
            self.lu = sparse_lu(self.A)
        except RuntimeError:
            self._refactor()

    def _refactor(self):
        log.debug("refactoring with partial pivoting at s = %s", self.bsys.s)
        self.robust = True
        try:
            self.lu = spla.splu(self.A)
        except RuntimeError as exc:  # singular factor
            raise SolverError(f"factorization failed at s = {self.bsys.s}: {exc}") from exc

    def solve(self, b: np.ndarray, check: bool = True) -> np.ndarray:
        b = np.asarray(b, dtype=complex)
        x = self.lu.solve(b)
        # one step of iterative refinement recovers the digits lost to pivoting
        x += self.lu.solve(b - self.A @ x)
        if check:
            try:
                _check_residual(self.A, x, b, self.bsys.s)
            except SolverError:
                if self.robust:
                    raise
                self._refactor()
                return self.solve(b, check)
        return x


def solve(bsys: BlockSystem, rhs, check: bool = True) -> SolutionSplit:
    b = _rhs_vector(rhs)
    return SolutionSplit.from_vector(MonolithicSolver(bsys).solve(b, check), bsys)


class SchurSolver:
    """Block elimination solver.

    ``order="fem-first"`` eliminates the volume unknowns with a sparse LU of
    FEM(s) and solves the dense boundary Schur complement.  ``order="bem-first"``
    eliminates the boundary unknowns with a dense LU and factors the volume
    Schur complement, which differs from FEM(s) only on boundary displacement
    DOFs.
    """

    def __init__(self, bsys: BlockSystem, order: str = "fem-first"):
        if order not in ("fem-first", "bem-first"):
            raise ValueError(f"unknown elimination order {order!r}")
        self.bsys, self.order = bsys, order
        self.fb, self.bf = bsys.coupling_blocks()
        bem = bsys.bem_matrix()
        try:
            if order == "fem-first":
                self.fem_lu = sparse_lu(bsys.fem)
                cols = np.unique(self.fb.tocoo().col)
                self.cols = cols
                Z = self.fem_lu.solve(self.fb[:, cols].toarray().astype(complex))
                S = bem.copy()
                S[:, cols] -= self.bf @ Z
                self.Z = Z
                self.S_lu = lu_factor(S)
            else:
                self.bem_lu = lu_factor(bem)
                rows = np.unique(self.fb.tocoo().row)
                cols = np.unique(self.bf.tocoo().col)
                Y = lu_solve(self.bem_lu, self.bf[:, cols].toarray().astype(complex))
                corr = sp_.coo_matrix(self.fb[rows, :] @ Y)
                corr = sp_.csc_matrix((corr.data, (rows[corr.row], cols[corr.col])), shape=bsys.fem.shape)
                self.fem_lu = sparse_lu(sp_.csc_matrix(bsys.fem - corr))
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"Schur factorization failed at s = {bsys.s}: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        nf = self.bsys.n_fem
        bf_, bb = np.asarray(b[:nf], dtype=complex), np.asarray(b[nf:], dtype=complex)
        if self.order == "fem-first":
            y = self.fem_lu.solve(bf_)
            xb = lu_solve(self.S_lu, bb - self.bf @ y)
            xf = y - self.Z @ xb[self.cols]
        else:
            w = lu_solve(self.bem_lu, bb)
            xf = self.fem_lu.solve(bf_ - self.fb @ w)
            xb = lu_solve(self.bem_lu, bb - self.bf @ xf)
        return np.concatenate([xf, xb])


def solve_schur(bsys: BlockSystem, rhs, order: str = "fem-first") -> SolutionSplit:
    return SolutionSplit.from_vector(SchurSolver(bsys, order).solve(_rhs_vector(rhs)), bsys)
