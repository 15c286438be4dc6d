import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermocq.fem_space import build_space, eval_basis, eval_basis_1d, reference_nodes
from thermocq.mesh import refine


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_basis_is_nodal(k):
    vals, _ = eval_basis(k, reference_nodes(k))
    np.testing.assert_allclose(vals, np.eye(len(vals)), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 5), x=st.floats(0, 1), y=st.floats(0, 1))
def test_partition_of_unity(k, x, y):
    if x + y > 1:
        x, y = 1 - x, 1 - y
    vals, grads = eval_basis(k, [[x, y]])
    assert vals.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-10)


def test_basis_gradients_match_finite_differences():
    p = np.array([[0.21, 0.33]])
    h = 1e-6
    for k in (1, 3, 5):
        _, g = eval_basis(k, p)
        fx = (eval_basis(k, p + [h, 0])[0] - eval_basis(k, p - [h, 0])[0]) / (2 * h)
        fy = (eval_basis(k, p + [0, h])[0] - eval_basis(k, p - [0, h])[0]) / (2 * h)
        np.testing.assert_allclose(g[..., 0], fx, atol=1e-7 * k**2)
        np.testing.assert_allclose(g[..., 1], fy, atol=1e-7 * k**2)


def test_1d_basis_matches_trace_of_2d_basis():
    t = np.linspace(0, 1, 7)
    for k in (1, 2, 4):
        v1, _ = eval_basis_1d(k, t)
        v2, _ = eval_basis(k, np.column_stack([t, 0 * t]))
        # edge 0 runs from vertex 0 to vertex 1 with k-1 interior nodes in between
        cols = [0] + list(range(3, 3 + k - 1)) + [1]
        np.testing.assert_allclose(v2[:, cols], v1, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_dof_counts(hexagon, k):
    sp = build_space(hexagon, k)
    edges, _ = hexagon.edges()
    ni = (k - 1) * (k - 2) // 2
    assert sp.ndof == hexagon.n_vertices + len(edges) * (k - 1) + hexagon.n_triangles * ni
    # every DOF shared by neighbours has the same coordinates from both sides
    assert np.unique(sp.element_dofs).size == sp.ndof


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_interpolation_reproduces_polynomials(hexagon, k):
    sp = build_space(hexagon, k)
    f = lambda x, y: (1 + x - 2 * y) ** k + x * y ** (k - 1)
    coef = sp.interpolate(f)
    ref = np.array([[0.2, 0.3], [0.6, 0.1]])
    vals, _ = sp.evaluate(coef, ref)
    pts = sp.geometry.map(ref)
    np.testing.assert_allclose(vals, f(pts[..., 0], pts[..., 1]), atol=1e-12)


def test_boundary_dofs_lie_on_boundary(hexagon):
    sp = build_space(refine(hexagon, 1), 3)
    pts = sp.dof_coordinates[sp.boundary_nodes()]
    assert np.max(sp.boundary.distance(pts)) < 1e-13
    # panel DOFs are ordered along the panel
    b = sp.boundary
    first = sp.dof_coordinates[sp.boundary_dofs[:, 0]]
    last = sp.dof_coordinates[sp.boundary_dofs[:, -1]]
    np.testing.assert_allclose(first, b.start, atol=1e-14)
    np.testing.assert_allclose(last, b.end, atol=1e-14)


def test_vector_interpolation_is_interleaved(hexagon):
    sp = build_space(hexagon, 2)
    c = sp.interpolate(lambda x, y: (x, -y))
    np.testing.assert_allclose(c[0::2], sp.dof_coordinates[:, 0])
    np.testing.assert_allclose(c[1::2], -sp.dof_coordinates[:, 1])


def test_unsupported_degree(hexagon):
    with pytest.raises(ValueError):
        build_space(hexagon, 6)
