"""Lagrangian P_k finite element spaces on triangles (k = 1..5).

Local node ordering on the reference triangle (0,0), (1,0), (0,1):

1. the three vertices;
2. k-1 equispaced nodes on each edge, edge i running from vertex i to
   vertex (i+1) % 3, listed in that direction;
3. interior nodes (i/k, j/k) with i, j >= 1 and i + j <= k-1, sorted by j
   then i.

Global numbering: vertex DOFs first (same index as the mesh vertex), then
k-1 DOFs per mesh edge running from the lower to the higher vertex index,
then interior DOFs triangle by triangle.  Vector fields interleave two scalar
copies: component c of scalar DOF d has index ``2*d + c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import BoundaryMesh, Mesh, extract_boundary
from .quadrature import QuadratureRule, triangle_rule

MAX_DEGREE = 5


def quadrature(order: int) -> QuadratureRule:
    return triangle_rule(order)


@lru_cache(maxsize=None)
def reference_nodes(k: int) -> np.ndarray:
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = list(verts)
    for i in range(3):
        a, b = verts[i], verts[(i + 1) % 3]
        nodes += [a + (b - a) * j / k for j in range(1, k)]
    nodes += [np.array([i / k, j / k]) for j in range(1, k) for i in range(1, k - j)]
    out = np.array(nodes)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _barycentric_indices(k: int) -> np.ndarray:
    nodes = np.rint(reference_nodes(k) * k).astype(int)
    return np.column_stack([k - nodes.sum(axis=1), nodes[:, 0], nodes[:, 1]])


def _silvester(k: int, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P_i(lam) = prod_{m<i} (k lam - m)/(m+1) and its derivative, i = 0..k."""
    val = np.ones(lam.shape + (k + 1,))
    der = np.zeros(lam.shape + (k + 1,))
    for i in range(1, k + 1):
        f = (k * lam - (i - 1)) / i
        der[..., i] = der[..., i - 1] * f + val[..., i - 1] * (k / i)
        val[..., i] = val[..., i - 1] * f
    return val, der


def eval_basis(k: int, p) -> tuple[np.ndarray, np.ndarray]:
    """Reference basis values (npts, nb) and gradients (npts, nb, 2) at points ``p``."""
    if not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"unsupported polynomial degree {k}")
    p = np.atleast_2d(np.asarray(p, dtype=float))
    lam = np.stack([1.0 - p[:, 0] - p[:, 1], p[:, 0], p[:, 1]], axis=1)
    idx = _barycentric_indices(k)
    P = []
    D = []
    for c in range(3):
        v, d = _silvester(k, lam[:, c])
        P.append(v[:, idx[:, c]])
        D.append(d[:, idx[:, c]])
    vals = P[0] * P[1] * P[2]
    dl = [D[0] * P[1] * P[2], P[0] * D[1] * P[2], P[0] * P[1] * D[2]]
    grads = np.stack([dl[1] - dl[0], dl[2] - dl[0]], axis=-1)
    return vals, grads


def eval_basis_1d(k: int, t) -> tuple[np.ndarray, np.ndarray]:
    """Equispaced P_k Lagrange basis on [0, 1] in node order 0, 1/k, ..., 1.

    Returns values and derivatives with shape t.shape + (k+1,).
    """
    t = np.asarray(t, dtype=float)
    j = np.arange(k + 1)
    pa, da = _silvester(k, 1.0 - t)
    pb, db = _silvester(k, t)
    pa, da = pa[..., k - j], da[..., k - j]
    pb, db = pb[..., j], db[..., j]
    return pa * pb, pa * db - da * pb


@dataclass(frozen=True)
class ElementGeometry:
    origin: np.ndarray  # (nt, 2) first vertex
    jac: np.ndarray  # (nt, 2, 2) columns v1-v0, v2-v0
    det: np.ndarray  # (nt,)
    inv_t: np.ndarray  # (nt, 2, 2) inverse transpose of jac

    def map(self, ref_pts: np.ndarray) -> np.ndarray:
        """Physical coordinates (nt, npts, 2) of reference points."""
        return self.origin[:, None, :] + np.einsum("tij,qj->tqi", self.jac, ref_pts)

    def grads(self, ref_grads: np.ndarray) -> np.ndarray:
        """Physical gradients (nt, npts, nb, 2) from reference gradients (npts, nb, 2)."""
        return np.einsum("tij,qbj->tqbi", self.inv_t, ref_grads)


def element_geometry(mesh: Mesh) -> ElementGeometry:
    v = mesh.vertices[mesh.triangles]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    return ElementGeometry(origin=v[:, 0], jac=jac, det=det, inv_t=np.transpose(inv, (0, 2, 1)))


@dataclass(frozen=True)
class FESpace:
    mesh: Mesh
    boundary: BoundaryMesh
    degree: int
    element_dofs: np.ndarray  # (nt, nb)
    boundary_dofs: np.ndarray  # (np, k+1) trace DOFs in order along each panel
    dof_coordinates: np.ndarray  # (ndof, 2)
    geometry: ElementGeometry

    @property
    def ndof(self) -> int:
        return len(self.dof_coordinates)

    @property
    def n_local(self) -> int:
        return self.element_dofs.shape[1]

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f(x, y)``; vector-valued ``f`` returning a tuple
        is interleaved."""
        x, y = self.dof_coordinates.T
        val = f(x, y)
        if isinstance(val, tuple):
            out = np.empty(2 * self.ndof, dtype=np.result_type(*val))
            out[0::2] = val[0]
            out[1::2] = val[1]
            return out
        return np.broadcast_to(val, x.shape).copy()

    def evaluate(self, coef: np.ndarray, ref_pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values (nt, npts) and gradients (nt, npts, 2) of a scalar field at
        reference points of every element."""
        phi, dphi = eval_basis(self.degree, ref_pts)
        loc = coef[self.element_dofs]  # (nt, nb)
        vals = np.einsum("qb,tb->tq", phi, loc)
        grads = np.einsum("tqbi,tb->tqi", self.geometry.grads(dphi), loc)
        return vals, grads

    def evaluate_vector(self, coef: np.ndarray, ref_pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values (nt, npts, 2) and gradients (nt, npts, 2, 2) [component, direction]."""
        v0, g0 = self.evaluate(coef[0::2], ref_pts)
        v1, g1 = self.evaluate(coef[1::2], ref_pts)
        return np.stack([v0, v1], axis=-1), np.stack([g0, g1], axis=-2)

    def boundary_nodes(self) -> np.ndarray:
        """Sorted indices of all DOFs lying on the boundary."""
        return np.unique(self.boundary_dofs)


def build_space(mesh: Mesh, k: int) -> FESpace:
    if not 1 <= k <= MAX_DEGREE:
        raise ValueError(f"unsupported polynomial degree {k} (expected 1..{MAX_DEGREE})")
    edges, tri2edge = mesh.edges()
    nv, ne, nt = mesh.n_vertices, len(edges), mesh.n_triangles
    ni = (k - 1) * (k - 2) // 2
    nb = (k + 1) * (k + 2) // 2
    tris = mesh.triangles
    dofs = np.empty((nt, nb), dtype=np.int64)
    dofs[:, :3] = tris
    col = 3
    for i in range(3):
        a, b = tris[:, i], tris[:, (i + 1) % 3]
        e = tri2edge[:, i]
        j = np.arange(k - 1)
        forward = nv + e[:, None] * (k - 1) + j[None, :]
        backward = nv + e[:, None] * (k - 1) + (k - 2 - j)[None, :]
        dofs[:, col:col + k - 1] = np.where((a < b)[:, None], forward, backward)
        col += k - 1
    dofs[:, col:] = nv + ne * (k - 1) + np.arange(nt)[:, None] * ni + np.arange(ni)[None, :]
    ndof = nv + ne * (k - 1) + nt * ni

    geo = element_geometry(mesh)
    coords = np.empty((ndof, 2))
    coords[dofs.ravel()] = geo.map(reference_nodes(k)).reshape(-1, 2)

    bnd = extract_boundary(mesh)
    l = bnd.local_edge
    edge_cols = 3 + l[:, None] * (k - 1) + np.arange(k - 1)[None, :]
    cols = np.column_stack([l, edge_cols, (l + 1) % 3])
    bdofs = dofs[bnd.triangle[:, None], cols]
    return FESpace(
        mesh=mesh,
        boundary=bnd,
        degree=k,
        element_dofs=dofs,
        boundary_dofs=bdofs,
        dof_coordinates=coords,
        geometry=geo,
    )
