import numpy as np
import pytest

from thermocq.mesh import MeshError, extract_boundary, load_mesh, mesh_from_arrays, refine, save_mesh


def test_shipped_meshes_are_valid(hexagon, pentagon):
    for mesh in (hexagon, pentagon):
        assert np.all(mesh.signed_areas() > 0)
        b = extract_boundary(mesh)
        assert len(b.loops) == 1
        # outward normals: a point just outside every panel midpoint is not in the solid
        eps = 1e-6 * b.h
        assert not b.contains(b.midpoints + eps * b.normals).any()
        assert b.contains(b.midpoints - eps * b.normals).all()


def test_hexagon_parameter_is_max_panel_length(hexagon):
    b = extract_boundary(hexagon)
    assert b.h == pytest.approx(0.2)
    assert b.h == pytest.approx(np.max(b.lengths))


def test_refinement_preserves_area_and_boundary(hexagon):
    fine = refine(hexagon, 2)
    assert fine.n_triangles == 16 * hexagon.n_triangles
    assert fine.area == pytest.approx(hexagon.area, rel=1e-14)
    b0, b2 = extract_boundary(hexagon), extract_boundary(fine)
    assert b2.n_panels == 4 * b0.n_panels
    assert b2.perimeter == pytest.approx(b0.perimeter, rel=1e-14)
    assert b2.h == pytest.approx(b0.h / 4)


def test_save_load_roundtrip(hexagon, tmp_path):
    p = tmp_path / "m.msh"
    save_mesh(hexagon, p)
    again = load_mesh(p)
    np.testing.assert_array_equal(again.vertices, hexagon.vertices)
    np.testing.assert_array_equal(again.triangles, hexagon.triangles)


def test_clockwise_triangles_are_reoriented():
    m = mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    assert m.signed_areas()[0] > 0


def test_invalid_meshes_are_rejected(tmp_path):
    with pytest.raises(MeshError):
        mesh_from_arrays([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])
    p = tmp_path / "bad.msh"
    p.write_text("3 1 0\n0 0\n1 0\n")
    with pytest.raises(MeshError):
        load_mesh(p)


def test_distance_and_contains(square_mesh):
    b = extract_boundary(square_mesh)
    pts = np.array([[0.5, 0.5], [1.5, 0.5], [-0.25, -0.25]])
    np.testing.assert_allclose(b.distance(pts), [0.5, 0.5, np.hypot(0.25, 0.25)], rtol=1e-14)
    np.testing.assert_array_equal(b.contains(pts), [True, False, False])
