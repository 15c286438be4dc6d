from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sps

from thermocq.bem import assemble_calderon, boundary_spaces_from_fe
from thermocq.fem_assembly import assemble_fem_block, assemble_fem_matrices, benchmark_material
from thermocq.fem_space import build_space
from thermocq.mesh import mesh_from_arrays, refine
from thermocq.system import (
    BLOCKS, MonolithicSolver, RhsData, SchurSolver, SolutionSplit, SolverError, assemble_block_system,
    assemble_rhs, assemble_trace_coupling, boundary_load, solve, solve_schur,
)


def make_system(mesh, k, s, rho_f=1.0):
    sp = build_space(mesh, k)
    bs = boundary_spaces_from_fe(sp)
    mats = assemble_fem_matrices(sp, benchmark_material())
    G = assemble_trace_coupling(sp, bs)
    C = assemble_calderon(s, bs)
    bsys = assemble_block_system(s, assemble_fem_block(mats, s), C, G, bs.mass_xy(), rho_f, 2 * sp.ndof)
    return sp, bs, bsys


@pytest.mark.parametrize("rho_f", [1.0, 2.5])
def test_coupling_blocks_are_exactly_skew(hexagon, rho_f):
    _, _, bsys = make_system(hexagon, 2, 1 + 2j, rho_f)
    up = bsys.block("u", "phi")
    pu = bsys.block("phi", "u")
    assert abs(up + pu.T).max() == 0.0
    assert abs(up).max() > 0


def test_trace_coupling_on_a_unit_panel():
    mesh = mesh_from_arrays([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    sp = build_space(mesh, 1)
    bs = boundary_spaces_from_fe(sp)
    G = assemble_trace_coupling(sp, bs).toarray()
    rows = [int(np.flatnonzero(bs.fe_dofs == d)[0]) for d in (0, 1)]
    # the bottom panel has outward normal (0, -1) and is the only panel at
    # vertices 0 and 1 with a nonzero y normal
    blk = G[np.ix_(rows, [1, 3])]
    np.testing.assert_allclose(blk, -np.array([[2, 1], [1, 2]]) / 6, atol=1e-15)
    assert G.sum() == pytest.approx(0.0, abs=1e-14)  # closed curve: int n = 0


def test_matrix_and_matvec_agree(hexagon):
    _, _, bsys = make_system(hexagon, 1, 2.8j)
    x = np.random.default_rng(1).standard_normal(bsys.shape[0]) * (1 + 0.5j)
    np.testing.assert_allclose(bsys.matrix() @ x, bsys.matvec(x), atol=1e-12 * np.abs(x).max())
    off = bsys.offsets()
    assert [off[b].stop - off[b].start for b in BLOCKS] == [bsys.n_u, bsys.n_theta, bsys.M1, bsys.M2]


@pytest.mark.parametrize("level", [0, 1])
@pytest.mark.parametrize("order", ["fem-first", "bem-first"])
def test_schur_agrees_with_monolithic(hexagon, level, order):
    _, _, bsys = make_system(refine(hexagon, level), 2, 1 + 3j)
    rng = np.random.default_rng(level)
    mono = MonolithicSolver(bsys)
    schur = SchurSolver(bsys, order)
    for _ in range(3):
        b = rng.standard_normal(bsys.shape[0]) + 1j * rng.standard_normal(bsys.shape[0])
        x1, x2 = mono.solve(b), schur.solve(b)
        assert np.linalg.norm(x1 - x2) <= 1e-8 * np.linalg.norm(x1)


def test_solution_split_roundtrip(hexagon):
    _, _, bsys = make_system(hexagon, 1, 1.0)
    rhs = RhsData.zeros(bsys)
    rhs = RhsData(rhs.d1 + 1.0, rhs.d2, rhs.d3, rhs.d4)
    a = solve(bsys, rhs)
    b = solve_schur(bsys, rhs)
    assert isinstance(a, SolutionSplit)
    assert np.linalg.norm(a.vector() - b.vector()) <= 1e-8 * np.linalg.norm(a.vector())
    np.testing.assert_array_equal(SolutionSplit.from_vector(a.vector(), bsys).vector(), a.vector())


def test_incident_rhs_uses_traces(hexagon):
    sp, bs, bsys = make_system(hexagon, 1, 2.0)
    load = boundary_load(sp, bs)

    class Const:
        def trace(self, p):
            return np.ones(len(p))

        def normal_derivative(self, p, n):
            return np.zeros(len(p))

    rhs = assemble_rhs(2.0, Const(), load, bsys.n_theta, bsys.M2, 1.0)
    # int_Gamma v . n = 0 for the constant displacement fields
    assert abs(rhs.d1[0::2].sum()) < 1e-12 and abs(rhs.d1[1::2].sum()) < 1e-12
    assert np.all(rhs.d3 == 0) and np.all(rhs.d2 == 0) and np.all(rhs.d4 == 0)
    np.testing.assert_allclose(load.y.sum(), sp.boundary.perimeter)


def test_dimension_checks(hexagon):
    sp = build_space(hexagon, 1)
    bs = boundary_spaces_from_fe(sp)
    mats = assemble_fem_matrices(sp, benchmark_material())
    G = assemble_trace_coupling(sp, bs)
    C = assemble_calderon(1.0, bs)
    with pytest.raises(ValueError):
        assemble_block_system(2.0, assemble_fem_block(mats, 2.0), C, G, bs.mass_xy(), 1.0, 2 * sp.ndof)
    with pytest.raises(ValueError):
        assemble_block_system(1.0, assemble_fem_block(mats, 1.0), C, G, bs.mass_xy(), 1.0, 2 * sp.ndof - 2)
    other = boundary_spaces_from_fe(build_space(refine(hexagon, 1), 1))
    with pytest.raises(ValueError):
        assemble_trace_coupling(sp, other)


def test_singular_matrix_is_reported(hexagon):
    _, _, bsys = make_system(hexagon, 1, 1.0)
    bad = replace(bsys, fem=sps.csc_matrix(bsys.fem.shape, dtype=complex))
    with pytest.raises(SolverError):
        MonolithicSolver(bad).solve(np.ones(bad.shape[0]))
