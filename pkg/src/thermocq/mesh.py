"""Triangular meshes of a polygonal solid and the induced boundary panels.

Mesh file format (UTF-8, whitespace separated, ``#`` starts a comment)::

    nv nt nb
    x y             (nv lines)
    i j k           (nt lines, 0-based vertex indices)
    i j             (nb optional lines, boundary edges)

When ``nb`` is zero the boundary is extracted from the triangles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class MeshError(ValueError):
    """Malformed or invalid mesh."""


@dataclass(frozen=True)
class BoundaryMesh:
    """Straight panels of the closed boundary curve(s), ordered along each loop.

    Panels are oriented counterclockwise for the outer loop so the solid lies
    on the left and ``normals`` point out of the solid.
    """

    vertex_ids: np.ndarray  # (np, 2) mesh vertex indices of panel endpoints
    start: np.ndarray  # (np, 2)
    end: np.ndarray  # (np, 2)
    lengths: np.ndarray  # (np,)
    normals: np.ndarray  # (np, 2)
    triangle: np.ndarray  # (np,) owning triangle
    local_edge: np.ndarray  # (np,) local edge index inside the owning triangle
    loops: tuple = ()  # tuple of panel-index arrays, one per closed loop

    @property
    def n_panels(self) -> int:
        return len(self.lengths)

    @property
    def tangents(self) -> np.ndarray:
        return (self.end - self.start) / self.lengths[:, None]

    @property
    def perimeter(self) -> float:
        return float(self.lengths.sum())

    @property
    def h(self) -> float:
        return float(self.lengths.max())

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.start + self.end)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean distance from each point to the boundary curve."""
        pts = np.atleast_2d(pts)
        d = self.end - self.start
        rel = pts[:, None, :] - self.start[None, :, :]
        t = np.clip(np.einsum("pqi,qi->pq", rel, d) / self.lengths**2, 0.0, 1.0)
        foot = self.start[None] + t[..., None] * d[None]
        return np.linalg.norm(pts[:, None, :] - foot, axis=2).min(axis=1)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Even-odd point-in-polygon test against all loops."""
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0:1], pts[:, 1:2]
        x0, y0 = self.start[:, 0][None], self.start[:, 1][None]
        x1, y1 = self.end[:, 0][None], self.end[:, 1][None]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        hits = crosses & (x < xint)
        return (hits.sum(axis=1) % 2) == 1


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counterclockwise
    boundary_edges: np.ndarray  # (nb, 2), solid on the left
    boundary_normals: np.ndarray = field(repr=False, default=None)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.signed_areas().sum())

    @property
    def h(self) -> float:
        """Mesh parameter: the longest boundary panel."""
        e = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return float(np.linalg.norm(e, axis=1).max())

    def max_edge_length(self) -> float:
        v = self.vertices[self.triangles]
        lens = [np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1) for i in range(3)]
        return float(np.max(lens))

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges (sorted vertex pairs) and the triangle-to-edge map.

        Local edge ``i`` of a triangle joins local vertices ``i`` and ``(i+1) % 3``.
        """
        return _edges(self.triangles)


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def _edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    loc = np.stack(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]], axis=1
    )  # (nt, 3, 2)
    key = np.sort(loc.reshape(-1, 2), axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    return edges, inv.reshape(-1, 3)


def _boundary_from_triangles(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directed boundary edges (solid on the left) with owning triangle and local edge."""
    edges, tri2edge = _edges(triangles)
    counts = np.bincount(tri2edge.ravel(), minlength=len(edges))
    if np.any(counts > 2):
        raise MeshError("non-manifold mesh: an edge is shared by more than two triangles")
    tri, loc = np.nonzero(counts[tri2edge] == 1)
    a = triangles[tri, loc]
    b = triangles[tri, (loc + 1) % 3]
    return np.column_stack([a, b]), tri, loc


def _make_mesh(vertices, triangles, boundary_edges=None) -> Mesh:
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64).copy()
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (nv, 2) array")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must be an (nt, 3) array")
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise MeshError("triangle vertex index out of range")
    areas = _signed_areas(vertices, triangles)
    if np.any(np.abs(areas) <= 1e-14 * max(1.0, np.abs(areas).max(initial=0.0))):
        raise MeshError("degenerate triangle with zero area")
    flipped = areas < 0
    if flipped.any():
        log.warning("reoriented %d clockwise triangle(s)", int(flipped.sum()))
        triangles[flipped] = triangles[flipped][:, [0, 2, 1]]
    derived, _, _ = _boundary_from_triangles(triangles)
    if boundary_edges is not None and len(boundary_edges):
        given = np.asarray(boundary_edges, dtype=np.int64)
        if {tuple(sorted(e)) for e in given.tolist()} != {tuple(sorted(e)) for e in derived.tolist()}:
            raise MeshError("boundary edges in file do not match the topological boundary")
    bnd = _order_loops(derived)
    v = vertices[bnd]
    d = v[:, 1] - v[:, 0]
    n = np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]
    return Mesh(vertices=vertices, triangles=triangles, boundary_edges=bnd, boundary_normals=n)


def _order_loops(edges: np.ndarray) -> np.ndarray:
    """Reorder directed edges so consecutive edges share an endpoint."""
    succ = {}
    for i, (a, _) in enumerate(edges.tolist()):
        if a in succ:
            raise MeshError("non-manifold boundary: vertex starts two boundary edges")
        succ[a] = i
    used = np.zeros(len(edges), dtype=bool)
    order = []
    for start in range(len(edges)):
        if used[start]:
            continue
        i = start
        while not used[i]:
            used[i] = True
            order.append(i)
            nxt = edges[i, 1]
            if nxt not in succ:
                raise MeshError("boundary is not closed")
            i = succ[nxt]
        if i != start:
            raise MeshError("boundary is not a union of closed loops")
    return edges[order]


def load_mesh(path) -> Mesh:
    """Read a mesh file, validate it, and orient its boundary."""
    text = Path(path).read_text(encoding="utf-8")
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line.split())
    if not tokens:
        raise MeshError(f"{path}: empty mesh file")
    try:
        nv, nt, nb = (int(t) for t in tokens[0])
    except ValueError as exc:
        raise MeshError(f"{path}: header must be 'nv nt nb'") from exc
    body = tokens[1:]
    if len(body) != nv + nt + nb:
        raise MeshError(f"{path}: expected {nv + nt + nb} data lines, found {len(body)}")
    try:
        verts = np.array([[float(x) for x in row] for row in body[:nv]])
        tris = np.array([[int(x) for x in row] for row in body[nv:nv + nt]], dtype=np.int64)
        bnd = np.array([[int(x) for x in row] for row in body[nv + nt:]], dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"{path}: malformed number") from exc
    if verts.shape != (nv, 2) or tris.shape != (nt, 3) or (nb and bnd.shape != (nb, 2)):
        raise MeshError(f"{path}: wrong number of columns")
    return _make_mesh(verts, tris, bnd if nb else None)


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += ["{} {} {}".format(*t) for t in mesh.triangles.tolist()]
    lines += ["{} {}".format(*e) for e in mesh.boundary_edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def mesh_from_arrays(vertices, triangles) -> Mesh:
    return _make_mesh(vertices, triangles)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four through its edge midpoints."""
    edges, tri2edge = mesh.edges()
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    m = nv + tri2edge  # m[:, i] is the midpoint of local edge i (v_i -> v_{i+1})
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    new = np.concatenate(
        [
            np.column_stack([a, mab, mca]),
            np.column_stack([mab, b, mbc]),
            np.column_stack([mca, mbc, c]),
            np.column_stack([mab, mbc, mca]),
        ]
    )
    return _make_mesh(verts, new)


def extract_boundary(mesh: Mesh) -> BoundaryMesh:
    """Panels of the boundary with outward normals, ordered along closed loops."""
    directed, tri, loc = _boundary_from_triangles(mesh.triangles)
    owner = {(int(a), int(b)): (int(t), int(l)) for (a, b), t, l in zip(directed.tolist(), tri, loc)}
    bnd = _order_loops(directed)
    tri_o = np.array([owner[(a, b)][0] for a, b in bnd.tolist()], dtype=np.int64)
    loc_o = np.array([owner[(a, b)][1] for a, b in bnd.tolist()], dtype=np.int64)
    start = mesh.vertices[bnd[:, 0]]
    end = mesh.vertices[bnd[:, 1]]
    d = end - start
    lengths = np.linalg.norm(d, axis=1)
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    loops, cur = [], [0]
    for i in range(1, len(bnd)):
        if bnd[i, 0] != bnd[i - 1, 1]:
            loops.append(np.array(cur))
            cur = []
        cur.append(i)
    loops.append(np.array(cur))
    return BoundaryMesh(
        vertex_ids=bnd,
        start=start,
        end=end,
        lengths=lengths,
        normals=normals,
        triangle=tri_o,
        local_edge=loc_o,
        loops=tuple(loops),
    )


def refine(mesh: Mesh, levels: int) -> Mesh:
    for _ in range(levels):
        mesh = refine_uniform(mesh)
    return mesh
