import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import scalar_pc_step
from radcem.assembly import FemOperators, l2_norm
from radcem.errors import InvalidArgument
from radcem.experiment import exact_solution, initial_value, source_term
from radcem.fields import ScalarField
from radcem.grid import CoarseGrid, FineGrid
from radcem.msbasis import build_multiscale_basis
from radcem.stepper import CoarseSystem, FineSystem, MatrixSystem, TimeGrid, run, step


def ops_for(nx, seed=0, contrast=10.0):
    g = FineGrid(nx)
    rng = np.random.default_rng(seed)
    k = ScalarField(g, np.where(rng.random(g.n_cells) < 0.3, contrast, 1.0))
    return FemOperators.build(g, k, k)


def test_time_grid():
    tg = TimeGrid.from_dt(0.1, 0.001)
    assert tg.I == 100 and tg.times[-1] == pytest.approx(0.1)
    with pytest.raises(InvalidArgument):
        TimeGrid.from_dt(0.1, 0.03)


def test_identity_step():
    sys = MatrixSystem(np.eye(2), np.zeros((2, 2)), lambda z: np.zeros((2, 2)))
    u = np.array([1.0, -3.0])
    assert np.allclose(step(u, sys, np.zeros(2), 0.0, 1.0)[:, 0], u)


@pytest.mark.parametrize("s, f, w", [(2.0, 1.0, 0.5), (0.7, -1.0, 3.0), (5.0, 0.0, 0.0)])
def test_scalar_recurrence(s, f, w):
    dt = 0.01
    sys = MatrixSystem([[1.0]], [[0.0]], lambda z: [[s * z[0] ** 3]], load=lambda t: np.array([f]))
    tg = TimeGrid(0.05, 5)
    traj = run(np.array([1.2]), sys, lambda x, y, t: None, np.full((5, 1), w), tg)
    u = 1.2
    for _ in range(5):
        u = scalar_pc_step(u, dt, 1.0, 0.0, s, f, w)
    assert traj.final[0, 0] == pytest.approx(u, rel=1e-14)


def test_predictor_and_corrector_share_rhs():
    seen = []

    class Recorder(MatrixSystem):
        def solve(self, z, rhs, dt, x0=None):
            seen.append(rhs)
            return super().solve(z, rhs, dt, x0)

    sys = Recorder([[2.0]], [[1.0]], lambda z: [[z[0] ** 3]])
    step(np.array([0.5]), sys, np.array([1.0]), 0.3, 0.1)
    assert len(seen) == 2 and seen[0] is seen[1]


def test_manufactured_single_step():
    g = FineGrid(40)
    one = ScalarField(g, np.ones(g.n_cells))
    ops = FemOperators.build(g, one, one)
    sys = MatrixSystem(ops.M.toarray(), ops.A.toarray(), lambda z: 0.0 * np.eye(ops.size),
                       unit_load=ops.unit_load, load=lambda t: ops.load(source_term, t))
    dt = 1e-3
    u1 = step(ops.interpolate(initial_value), sys, ops.load(source_term, dt), 0.0, dt)[:, 0]
    xy = g.node_coords[g.interior_nodes]
    exact = exact_solution(xy[:, 0], xy[:, 1], dt)
    assert np.abs(u1 - exact).max() <= 5 * (dt ** 2 * np.pi ** 4 + g.h ** 2)


def test_zero_steps_returns_initial():
    ops = ops_for(6)
    sys = FineSystem(ops)
    u0 = sys.initial(initial_value)
    traj = run(u0, sys, source_term, None, TimeGrid(0.1, 0))
    assert np.array_equal(traj.final[:, 0], u0)


def test_hundred_steps_and_snapshots():
    ops = ops_for(4)
    sys = FineSystem(ops)
    seen = []
    traj = run(sys.initial(initial_value), sys, None, None, TimeGrid.from_dt(0.1, 0.001),
               snapshot_times=(0.05,), observe=lambda j, t, U: seen.append(j))
    assert seen == list(range(101))
    assert set(traj.snapshots) == {0.05}
    with pytest.raises(InvalidArgument):
        run(sys.initial(initial_value), sys, None, None, TimeGrid(0.1, 10), snapshot_times=(0.015,))


@given(st.integers(0, 10 ** 6))
def test_dissipation_without_forcing(seed):
    ops = ops_for(6, seed, 100.0)
    sys = FineSystem(ops)
    norms = []
    run(sys.initial(initial_value), sys, None, None, TimeGrid(0.05, 10),
        observe=lambda j, t, U: norms.append(l2_norm(U[:, 0], ops.M)))
    assert np.all(np.diff(norms) <= 1e-14)


def test_batch_solvers_agree_and_are_deterministic():
    ops = ops_for(10, 1, 1e3)
    wdot = np.random.default_rng(0).standard_normal((20, 5)) * 3
    tg = TimeGrid(0.02, 20)
    u0 = ops.interpolate(initial_value)
    direct = run(u0, FineSystem(ops, "direct"), source_term, wdot, tg).final
    pcg = run(u0, FineSystem(ops, "pcg"), source_term, wdot, tg).final
    again = run(u0, FineSystem(ops, "pcg", threads=3), source_term, wdot, tg).final
    assert np.abs(direct - pcg).max() <= 1e-8 * np.abs(direct).max()
    assert np.array_equal(pcg, again)


def test_paths_mismatch_rejected():
    ops = ops_for(4)
    u0 = np.ones((ops.size, 3))
    with pytest.raises(InvalidArgument):
        run(u0, FineSystem(ops), None, np.zeros((2, 2)), TimeGrid(0.02, 2))


def test_coarse_matches_fine_with_full_space_basis():
    g = FineGrid(8)
    c = CoarseGrid(g, 2)
    k = ScalarField(g, np.where(np.random.default_rng(3).random(g.n_cells) < 0.3, 1e3, 1.0))
    ops = FemOperators.build(g, k, k)
    basis = build_multiscale_basis(ops, c, (c.ratio + 1) ** 2, c.Nx,
                                   rank_deficient="lstsq").compressed()
    wdot = np.random.default_rng(1).standard_normal((10, 4))
    tg = TimeGrid(0.01, 10)
    fine = FineSystem(ops, "direct")
    coarse = CoarseSystem(ops, basis, "direct")
    uf = run(fine.initial(initial_value), fine, source_term, wdot, tg).final
    uc = coarse.lift(run(coarse.initial(initial_value), coarse, source_term, wdot, tg).final)
    assert np.linalg.norm(uc - uf) <= 1e-6 * np.linalg.norm(uf)


def test_coarse_pcg_matches_direct():
    g = FineGrid(12)
    c = CoarseGrid(g, 3)
    k = ScalarField(g, np.where(np.random.default_rng(5).random(g.n_cells) < 0.3, 1e4, 1.0))
    ops = FemOperators.build(g, k, k)
    basis = build_multiscale_basis(ops, c, 3, 1)
    wdot = np.random.default_rng(2).standard_normal((10, 6)) * 5
    tg = TimeGrid(0.01, 10)
    a = CoarseSystem(ops, basis, "direct")
    b = CoarseSystem(ops, basis, "pcg")
    ya = run(a.initial(initial_value), a, source_term, wdot, tg).final
    yb = run(b.initial(initial_value), b, source_term, wdot, tg).final
    assert np.abs(ya - yb).max() <= 1e-8 * np.abs(ya).max()
