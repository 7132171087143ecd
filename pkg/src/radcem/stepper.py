"""Semi-implicit predictor-corrector time stepping.

Each step solves

    (M + dt A + dt N(z)) X = M U_prev + dt F + dt wdot * g

twice with the same right-hand side: first with z = U_prev (predictor), then
with z = predictor (corrector). ``N(z)`` is the radiation matrix frozen at z.

States are (n, k) arrays, one column per Monte Carlo path, so a whole batch
of paths advances in lockstep. The systems below supply M, g, F and the
frozen-coefficient solve for the fine space, the multiscale space, or plain
user-given matrices.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import FemOperators
from .errors import InvalidArgument, SolverFailure
from .linalg import factorize, pcg_batch
from .msbasis import MultiscaleBasis, project_matrix


@dataclass(frozen=True)
class TimeGrid:
    T: float
    I: int

    def __post_init__(self):
        if self.T <= 0 or self.I < 0:
            raise InvalidArgument(f"need T > 0 and I >= 0, got T={self.T}, I={self.I}")

    @classmethod
    def from_dt(cls, T: float, dt: float) -> "TimeGrid":
        I = int(round(T / dt))
        if I < 1 or abs(I * dt - T) > 1e-9 * T:
            raise InvalidArgument(f"T={T} is not an integer multiple of dt={dt}")
        return cls(T, I)

    @property
    def dt(self) -> float:
        return self.T / self.I if self.I else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.I + 1)


@dataclass
class SolveStats:
    solves: int = 0
    pcg_iterations: int = 0
    fallbacks: int = 0
    preconditioner_builds: int = 0
    negative_weight_solves: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


class FineSystem:
    """Fine-grid Galerkin system on interior dofs.

    solver='direct' factorizes every path's matrix; solver='pcg' factorizes one
    matrix frozen at the batch-mean state and runs CG per path with it as
    preconditioner, falling back to direct for paths that stall.
    """

    def __init__(self, ops: FemOperators, solver: str = "direct", tol: float = 1e-10,
                 threads: int = 1, max_iter: int = 60):
        if solver not in ("direct", "pcg"):
            raise InvalidArgument(f"unknown fine solver {solver!r}")
        self.ops = ops
        self.solver = solver
        self.tol = tol
        self.threads = threads
        self.max_iter = max_iter
        self.mass = ops.M
        self.unit_load = ops.unit_load
        self.stats = SolveStats()

    @property
    def size(self) -> int:
        return self.ops.size

    def load(self, f, t):
        return self.ops.load(f, t)

    def lift(self, X):
        return X

    def initial(self, u0):
        return self.ops.interpolate(u0)

    def matrix(self, z, dt) -> sp.csr_matrix:
        # M, A and every radiation matrix share one CSR pattern
        N = self.ops.radiation(z)
        K = N.copy()
        K.data = self.ops.M.data + dt * self.ops.A.data + dt * N.data
        return K

    def _direct(self, z, rhs, dt, path=None):
        try:
            return factorize(self.matrix(z, dt)).solve(rhs)
        except SolverFailure as exc:
            raise SolverFailure(f"path {path}: {exc}", getattr(exc, "residual", None)) from exc

    def solve(self, z, rhs, dt, x0=None):
        z, rhs = _as_batch(z), _as_batch(rhs)
        k = rhs.shape[1]
        self.stats.solves += k
        if np.any(self.ops.assembler.cell_average @ z < 0):
            self.stats.negative_weight_solves += 1
        if self.solver == "direct" or k < 3:
            return self._solve_direct(z, rhs, dt)
        lu = factorize(self.matrix(z.mean(axis=1), dt))
        self.stats.preconditioner_builds += 1
        base = (self.ops.M + dt * self.ops.A).tocsr()

        def matvec(X, cols):
            return base @ X + dt * self.ops.radiation_action(z[:, cols], X)

        X, iters, ok = pcg_batch(matvec, lu.solve, rhs, X0=x0, tol=self.tol,
                                 max_iter=self.max_iter)
        self.stats.pcg_iterations += int(iters.sum())
        for p in np.flatnonzero(~ok):
            self.stats.fallbacks += 1
            X[:, p] = self._direct(z[:, p], rhs[:, p], dt, p)
        return X

    def _solve_direct(self, z, rhs, dt):
        def one(p):
            return self._direct(z[:, p], rhs[:, p], dt, p)

        cols = range(rhs.shape[1])
        if self.threads > 1 and rhs.shape[1] > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(one, cols))
        else:
            parts = [one(p) for p in cols]
        return np.column_stack(parts)


class CoarseSystem:
    """Galerkin projection of the fine system onto the multiscale space.

    The radiation term is never tabulated on the coarse space: the state is
    lifted to the fine grid, the fine weighted mass is formed there and then
    projected. solver='direct' does that for every path; solver='pcg' projects
    only the matrix frozen at the batch-mean state, uses it as preconditioner
    and applies each path's projected operator matrix-free.
    """

    def __init__(self, ops: FemOperators, basis: MultiscaleBasis, solver: str = "pcg",
                 tol: float = 1e-10, max_iter: int = 60):
        if solver not in ("direct", "pcg"):
            raise InvalidArgument(f"unknown coarse solver {solver!r}")
        self.ops = ops
        self.basis = basis
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self.Phi = basis.dense()
        self.mass = project_matrix(self.Phi, ops.M)
        self.stiffness = project_matrix(self.Phi, ops.A)
        self.unit_load = self.Phi.T @ ops.unit_load
        self.stats = SolveStats()

    @property
    def size(self) -> int:
        return self.Phi.shape[1]

    def load(self, f, t):
        return self.Phi.T @ self.ops.load(f, t)

    def lift(self, Y):
        return self.Phi @ Y

    def initial(self, u0):
        """L2 projection of the fine interpolant of u0."""
        b = self.Phi.T @ (self.ops.M @ self.ops.interpolate(u0))
        return sla.solve(self.mass, b, assume_a="pos")

    def matrix(self, y, dt) -> np.ndarray:
        N = project_matrix(self.Phi, self.ops.radiation(self.Phi @ y))
        return self.mass + dt * self.stiffness + dt * N

    def _direct(self, y, rhs, dt):
        K = self.matrix(y, dt)
        try:
            return sla.cho_solve(sla.cho_factor(K), rhs)
        except np.linalg.LinAlgError:
            self.stats.fallbacks += 1
            return sla.solve(K, rhs)

    def solve(self, z, rhs, dt, x0=None):
        z, rhs = _as_batch(z), _as_batch(rhs)
        k = rhs.shape[1]
        self.stats.solves += k
        Zf = self.Phi @ z
        if np.any(self.ops.assembler.cell_average @ Zf < 0):
            self.stats.negative_weight_solves += 1
        if self.solver == "direct" or k < 3:
            return np.column_stack([self._direct(z[:, p], rhs[:, p], dt) for p in range(k)])
        try:
            pre = sla.cho_factor(self.matrix(z.mean(axis=1), dt))
        except np.linalg.LinAlgError as exc:
            raise SolverFailure(f"reference coarse matrix is not SPD: {exc}") from exc
        self.stats.preconditioner_builds += 1
        base = self.mass + dt * self.stiffness

        def matvec(Y, cols):
            rad = self.ops.radiation_action(Zf[:, cols], self.Phi @ Y)
            return base @ Y + dt * (self.Phi.T @ rad)

        Y, iters, ok = pcg_batch(matvec, lambda R: sla.cho_solve(pre, R), rhs, X0=x0,
                                 tol=self.tol, max_iter=self.max_iter)
        self.stats.pcg_iterations += int(iters.sum())
        for p in np.flatnonzero(~ok):
            self.stats.fallbacks += 1
            Y[:, p] = self._direct(z[:, p], rhs[:, p], dt)
        return Y


class MatrixSystem:
    """Small system given directly by M, A and a radiation callback z -> N(z)."""

    def __init__(self, M, A, radiation, unit_load=None, load=None):
        self.mass = np.atleast_2d(np.asarray(M, dtype=float))
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.radiation = radiation
        n = self.mass.shape[0]
        self.unit_load = np.ones(n) if unit_load is None else np.asarray(unit_load, float)
        self._load = load
        self.stats = SolveStats()

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    def load(self, f, t):
        return self._load(t) if self._load is not None else np.zeros(self.size)

    def lift(self, X):
        return X

    def solve(self, z, rhs, dt, x0=None):
        z, rhs = _as_batch(z), _as_batch(rhs)
        self.stats.solves += rhs.shape[1]
        out = np.empty_like(rhs)
        for p in range(rhs.shape[1]):
            K = self.mass + dt * self.A + dt * np.atleast_2d(self.radiation(z[:, p]))
            out[:, p] = np.linalg.solve(K, rhs[:, p])
        return out


def step(U_prev, system, F, wdot, dt):
    """One predictor-corrector step for a batch of states.

    `F` is the load vector at the new time level (shared by all paths) and
    `wdot` holds the noise value of each path at that time.
    """
    U_prev = _as_batch(U_prev)
    wdot = np.broadcast_to(np.asarray(wdot, dtype=float), (U_prev.shape[1],))
    rhs = system.mass @ U_prev + dt * (np.asarray(F)[:, None]
                                       + np.outer(system.unit_load, wdot))
    U_hat = system.solve(U_prev, rhs, dt, x0=U_prev)
    return system.solve(U_hat, rhs, dt, x0=U_hat)


@dataclass
class Trajectory:
    final: np.ndarray
    times: np.ndarray
    snapshots: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


def run(U0, system, f, wdot, time_grid: TimeGrid, snapshot_times=(), observe=None) -> Trajectory:
    """Apply `step` I times.

    `wdot` is (I, k): noise value of each of k paths at t_1..t_I (or None for
    no noise). `f(x, y, t)` may be None for a zero source. `observe(j, t, U)`
    is called at every time level including t_0; snapshots of the lifted
    state are kept for the requested times.
    """
    U = _as_batch(U0).copy()
    k = U.shape[1]
    times = time_grid.times
    I, dt = time_grid.I, time_grid.dt
    if wdot is None:
        wdot = np.zeros((I, k))
    wdot = np.asarray(wdot, dtype=float)
    wdot = wdot.reshape(I, -1) if wdot.ndim < 2 else wdot
    if wdot.shape[0] != I:
        raise InvalidArgument(f"noise has {wdot.shape[0]} time levels, expected {I}")
    if k == 1 and wdot.shape[1] > 1:
        U = np.repeat(U, wdot.shape[1], axis=1)
        k = U.shape[1]
    if wdot.shape[1] not in (1, k):
        raise InvalidArgument(f"noise has {wdot.shape[1]} paths, state has {k}")
    wanted = {_snap_index(t, time_grid): t for t in snapshot_times}
    snaps = {}
    zero = np.zeros(system.size)

    def record(j):
        if observe is not None:
            observe(j, times[j], U)
        if j in wanted:
            snaps[wanted[j]] = system.lift(U).copy()

    record(0)
    for j in range(1, I + 1):
        F = system.load(f, times[j]) if f is not None else zero
        U = step(U, system, F, wdot[j - 1], dt)
        record(j)
    stats = system.stats.as_dict() if hasattr(system, "stats") else {}
    return Trajectory(U, times, snaps, stats)


def _snap_index(t, tg: TimeGrid) -> int:
    if tg.I == 0:
        return 0
    j = int(round(t / tg.dt))
    if not 0 <= j <= tg.I or abs(j * tg.dt - t) > 1e-9 * max(tg.T, 1.0):
        raise InvalidArgument(f"snapshot time {t} is not on the time grid")
    return j
