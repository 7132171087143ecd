"""Monte Carlo comparison of fine and multiscale solutions, plus parameter sweeps.

Every path is one truncated-noise realization shared by the fine reference
and the multiscale run. Paths advance together as columns of one array, so
the result does not depend on how many worker threads are used.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import FemOperators, energy_norm, l2_norm
from .errors import InvalidArgument
from .fields import (InclusionSpec, PeriodicSpec, ScalarField, gen_inclusions, gen_periodic,
                     read_field)
from .grid import CoarseGrid, FineGrid, default_layers
from .msbasis import MultiscaleBasis, build_multiscale_basis
from .noise import (STREAM_FIELD, NoiseSpec, noise_paths, stream, truncation_tail)
from .stepper import CoarseSystem, FineSystem, TimeGrid, run

log = logging.getLogger(__name__)

FIELD_KINDS = ("periodic", "inclusions", "constant", "file")


def source_term(x, y, t):
    return 3 * np.pi ** 2 * np.exp(np.pi ** 2 * t) * np.sin(np.pi * x) * np.sin(np.pi * y)


def initial_value(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def exact_solution(x, y, t):
    """Solution of the source/initial pair above when kappa=1, sigma=0 and no noise."""
    return np.exp(np.pi ** 2 * t) * initial_value(x, y)


@dataclass(frozen=True)
class ExperimentConfig:
    nx: int = 100
    Nx: int = 10
    layers: int | None = None  # None -> default_layers(H)
    n_basis: int = 6
    field: str = "periodic"
    contrast: float = 1e5  # inclusion value; the background is `background`
    background: float = 1.0
    period: float = 0.1
    mask_file: str | None = None
    inclusions: int = 10
    r_min: float = 0.05
    r_max: float = 0.1
    overlap: bool = False
    field_file: str | None = None
    sigma: float | None = None  # None -> sigma equals kappa
    noise_form: str = "fourier"
    noise_n: int = 32
    decay: str = "k32"
    literal_chi: bool = False
    dt: float = 1e-3
    T: float = 0.1
    paths: int = 100
    seed: int = 100
    threads: int = 1
    fine_solver: str = "pcg"
    coarse_solver: str = "pcg"
    snapshots: tuple = ()

    def __post_init__(self):
        if self.paths < 1:
            raise InvalidArgument(f"paths must be >= 1, got {self.paths}")
        if self.field not in FIELD_KINDS:
            raise InvalidArgument(f"field must be one of {FIELD_KINDS}, got {self.field!r}")
        if self.nx % self.Nx:
            raise InvalidArgument(f"nx={self.nx} is not a multiple of Nx={self.Nx}")
        if self.n_basis < 1:
            raise InvalidArgument(f"n_basis must be >= 1, got {self.n_basis}")
        if self.field == "file" and not self.field_file:
            raise InvalidArgument("field='file' needs field_file")
        TimeGrid.from_dt(self.T, self.dt)
        self.noise_spec  # validates the noise keys

    @property
    def H(self) -> float:
        return 1.0 / self.Nx

    @property
    def resolved_layers(self) -> int:
        return self.layers if self.layers is not None else default_layers(self.H)

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.noise_form, self.noise_n, self.decay, self.T, self.literal_chi)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid.from_dt(self.T, self.dt)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["snapshots"] = list(self.snapshots)
        return d


def build_kappa(config: ExperimentConfig, grid: FineGrid) -> ScalarField:
    if config.field == "file":
        return read_field(config.field_file, grid)
    if config.field == "constant":
        return ScalarField(grid, np.full(grid.n_cells, config.background))
    if config.field == "periodic":
        mask = np.loadtxt(config.mask_file, ndmin=2) if config.mask_file else None
        spec = PeriodicSpec(config.period, config.background, config.contrast, mask)
        return gen_periodic(grid, spec)
    spec = InclusionSpec(config.inclusions, config.r_min, config.r_max, config.background,
                         config.contrast, config.overlap)
    return gen_inclusions(grid, spec, stream(config.seed, STREAM_FIELD))


@dataclass
class Problem:
    """Everything shared by the fine and the multiscale runs of one configuration."""

    config: ExperimentConfig
    grid: FineGrid
    coarse: CoarseGrid
    kappa: ScalarField
    sigma: ScalarField
    ops: FemOperators
    time_grid: TimeGrid
    paths: list
    wdot: np.ndarray  # (I, P)


def build_problem(config: ExperimentConfig, kappa: ScalarField | None = None,
                  n_draw: int | None = None) -> Problem:
    grid = FineGrid(config.nx)
    coarse = CoarseGrid(grid, config.Nx)
    kappa = kappa if kappa is not None else build_kappa(config, grid)
    if config.sigma is None:
        sigma = kappa
    else:
        sigma = ScalarField(grid, np.full(grid.n_cells, float(config.sigma)))
    ops = FemOperators.build(grid, kappa, sigma)
    tg = config.time_grid
    paths = noise_paths(config.noise_spec, tg.times[1:], config.seed, config.paths, n_draw)
    wdot = np.column_stack([p.wdot for p in paths]) if tg.I else np.zeros((0, config.paths))
    return Problem(config, grid, coarse, kappa, sigma, ops, tg, paths, wdot)


def pairwise_mean(X: np.ndarray) -> np.ndarray:
    """Mean over columns by fixed-order tree summation."""
    X = np.asarray(X)

    def tree(lo, hi):
        if hi - lo == 1:
            return X[:, lo]
        mid = (lo + hi) // 2
        return tree(lo, mid) + tree(mid, hi)

    return tree(0, X.shape[1]) / X.shape[1]


@dataclass
class SolutionRun:
    mean: np.ndarray  # mean field at T, fine interior dofs
    series: np.ndarray | None  # (I+1, n) mean at every time level, if requested
    snapshots: dict
    stats: dict
    wall: float
    final: np.ndarray | None = None  # (n, P) per-path fields at T, if requested


def _collect(system, U0, problem: Problem, series: bool, keep_paths: bool) -> SolutionRun:
    rows = []

    def observe(j, t, U):
        if series:
            rows.append(system.lift(pairwise_mean(U)))

    t0 = time.perf_counter()
    traj = run(U0, system, source_term, problem.wdot, problem.time_grid,
               snapshot_times=problem.config.snapshots, observe=observe)
    wall = time.perf_counter() - t0
    lifted = system.lift(traj.final)
    snaps = {t: pairwise_mean(v) for t, v in traj.snapshots.items()}
    return SolutionRun(pairwise_mean(lifted), np.array(rows) if series else None, snaps,
                       traj.stats, wall, lifted if keep_paths else None)


def run_fine(problem: Problem, series: bool = False, keep_paths: bool = False) -> SolutionRun:
    cfg = problem.config
    system = FineSystem(problem.ops, solver=cfg.fine_solver, threads=cfg.threads)
    return _collect(system, system.initial(initial_value), problem, series, keep_paths)


def build_basis(problem: Problem, n_basis: int, layers: int) -> tuple[MultiscaleBasis, float]:
    t0 = time.perf_counter()
    basis = build_multiscale_basis(problem.ops, problem.coarse, n_basis, layers,
                                   threads=problem.config.threads)
    return basis, time.perf_counter() - t0


def run_coarse(problem: Problem, basis: MultiscaleBasis, series: bool = False) -> SolutionRun:
    system = CoarseSystem(problem.ops, basis, solver=problem.config.coarse_solver)
    return _collect(system, system.initial(initial_value), problem, series, False)


def relative_errors(u_ms: np.ndarray, u_h: np.ndarray, ops: FemOperators) -> tuple[float, float]:
    """Relative L2 and energy-norm distance of u_ms from the reference u_h."""
    e = u_ms - u_h
    return (l2_norm(e, ops.M) / l2_norm(u_h, ops.M),
            energy_norm(e, ops.A) / energy_norm(u_h, ops.A))


def series_errors(ms_series: np.ndarray, h_series: np.ndarray, ops: FemOperators) -> np.ndarray:
    """(I+1, 2) relative L2 and energy errors at every time level."""
    return np.array([relative_errors(a, b, ops) for a, b in zip(ms_series, h_series)])


@dataclass
class RunResult:
    config: ExperimentConfig
    mean_fine: np.ndarray
    mean_coarse: np.ndarray
    eps_l2: float
    eps_a: float
    Lambda: float
    n_ms: int
    n_f: int
    wall_times: dict
    meta: dict = field(default_factory=dict)
    times: np.ndarray | None = None
    series: np.ndarray | None = None  # (I+1, 2): eps_l2(t), eps_a(t)
    snapshots: dict = field(default_factory=dict)  # t -> (fine mean, coarse mean)

    def metadata(self) -> dict:
        """Deterministic metadata: config echo (minus thread count), sizes, errors, flags."""
        cfg = self.config.as_dict()
        cfg.pop("threads")
        return {"config": cfg, "eps_l2": self.eps_l2, "eps_a": self.eps_a,
                "Lambda": self.Lambda, "n_ms": self.n_ms, "n_f": self.n_f, **self.meta}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.metadata(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.mean_fine).tobytes())
        h.update(np.ascontiguousarray(self.mean_coarse).tobytes())
        if self.series is not None:
            h.update(np.ascontiguousarray(self.series).tobytes())
        return h.hexdigest()


class ReferenceCache(dict):
    """Fine reference runs keyed by everything the fine run depends on."""

    @staticmethod
    def key(config: ExperimentConfig, series: bool) -> tuple:
        d = config.as_dict()
        for k in ("layers", "n_basis", "threads", "coarse_solver"):
            d.pop(k)
        return tuple(sorted((k, str(v)) for k, v in d.items())) + (series,)

    def reference(self, config: ExperimentConfig, series: bool = False):
        k = self.key(config, series)
        if not series and self.key(config, True) in self:
            return self[self.key(config, True)]
        if k not in self:
            if series and self.key(config, False) in self:
                del self[self.key(config, False)]
            problem = build_problem(config)
            self[k] = (problem, run_fine(problem, series=series))
        return self[k]


def run_mc(config: ExperimentConfig, *, series: bool = False,
           cache: ReferenceCache | None = None, n_basis: int | None = None,
           layers: int | None = None) -> RunResult:
    cache = cache if cache is not None else ReferenceCache()
    problem, fine = cache.reference(config, series)
    L = n_basis if n_basis is not None else config.n_basis
    m = layers if layers is not None else config.resolved_layers
    basis, t_basis = build_basis(problem, L, m)
    coarse = run_coarse(problem, basis, series=series)
    eps_l2, eps_a = relative_errors(coarse.mean, fine.mean, problem.ops)
    errs = series_errors(coarse.series, fine.series, problem.ops) if series else None
    meta = {
        "seed": config.seed,
        "path_seeds": [[p.seed, p.path_id] for p in problem.paths],
        "n_basis": L,
        "layers": m,
        "contrast": float(problem.kappa.values.max() / problem.kappa.values.min()),
        "fine_stats": fine.stats,
        "coarse_stats": coarse.stats,
        "negative_temperature": bool(fine.stats.get("negative_weight_solves")
                                     or coarse.stats.get("negative_weight_solves")),
    }
    log.info("run L=%d m=%d: eps_l2=%.4e eps_a=%.4e", L, m, eps_l2, eps_a)
    return RunResult(config, fine.mean, coarse.mean, eps_l2, eps_a, basis.Lambda, basis.n_ms,
                     problem.ops.size,
                     {"fine": fine.wall, "basis": t_basis, "coarse": coarse.wall}, meta,
                     problem.time_grid.times if series else None, errs,
                     {t: (fine.snapshots[t], coarse.snapshots[t]) for t in fine.snapshots})


@dataclass
class Table:
    columns: list
    rows: list

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def sweep_contrast(config: ExperimentConfig, contrasts, layer_list,
                   cache: ReferenceCache | None = None) -> Table:
    """eps_a / eps_l2 for every (layers, contrast) pair; one fine reference per contrast."""
    contrasts, layer_list = list(contrasts), list(layer_list)
    if not contrasts or not layer_list:
        raise InvalidArgument("contrast and layer lists must be non-empty")
    cache = cache if cache is not None else ReferenceCache()
    rows = []
    for c in contrasts:
        cfg = config.replace(contrast=float(c))
        for m in layer_list:
            r = run_mc(cfg, cache=cache, layers=int(m))
            rows.append([int(m), float(c), r.eps_a, r.eps_l2, r.Lambda])
    return Table(["layers", "contrast", "eps_a", "eps_l2", "Lambda"], rows)


def sweep_layers(config: ExperimentConfig, layer_list, cache=None) -> Table:
    return sweep_contrast(config, [config.contrast], layer_list, cache)


@dataclass
class BasisSweep:
    table: Table
    times: np.ndarray | None = None
    series: dict = field(default_factory=dict)  # n_basis -> (I+1, 2) error series


def sweep_basis(config: ExperimentConfig, counts, series: bool = False,
                cache: ReferenceCache | None = None) -> BasisSweep:
    counts = [int(c) for c in counts]
    if counts != sorted(counts):
        raise InvalidArgument(f"basis counts must be ascending, got {counts}")
    cache = cache if cache is not None else ReferenceCache()
    rows, curves, times = [], {}, None
    for L in counts:
        r = run_mc(config, series=series, cache=cache, n_basis=L)
        rows.append([L, r.eps_a, r.eps_l2, r.Lambda, r.n_ms])
        if series:
            curves[L], times = r.series, r.times
    return BasisSweep(Table(["n_basis", "eps_a", "eps_l2", "Lambda", "n_ms"], rows),
                      times, curves)


def energy_error_series(config: ExperimentConfig, counts=(2, 3, 4, 6, 7, 8),
                        cache: ReferenceCache | None = None) -> Table:
    """Relative energy error of the mean at every time level for each basis count."""
    sweep = sweep_basis(config, counts, series=True, cache=cache)
    cols = ["t"] + [f"eps_a_M{L}" for L in sweep.series]
    rows = [[float(t)] + [float(sweep.series[L][j, 1]) for L in sweep.series]
            for j, t in enumerate(sweep.times)]
    return Table(cols, rows)


def sweep_inclusions(config: ExperimentConfig, counts, basis_counts=None,
                     cache: ReferenceCache | None = None) -> Table:
    basis_counts = list(basis_counts) if basis_counts else [config.n_basis]
    cache = cache if cache is not None else ReferenceCache()
    rows = []
    for N in counts:
        cfg = config.replace(field="inclusions", inclusions=int(N))
        for L in basis_counts:
            r = run_mc(cfg, cache=cache, n_basis=int(L))
            rows.append([int(N), int(L), r.eps_l2, r.eps_a, r.Lambda])
    return Table(["inclusions", "n_basis", "eps_l2", "eps_a", "Lambda"], rows)


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class TruncationStudy:
    table: Table
    analytic_slope: float
    mc_slope: float
    n_ref: int


def truncation_study(config: ExperimentConfig, n_list) -> TruncationStudy:
    """Analytic noise tails and Monte Carlo solution differences against n_ref = 4 max(n).

    Paths at every truncation share their leading Gaussian coordinates, so the
    differences measure the truncation alone.
    """
    n_list = [int(n) for n in n_list]
    if n_list != sorted(n_list) or not n_list or n_list[0] < 1:
        raise InvalidArgument(f"truncation levels must be positive and ascending, got {n_list}")
    n_ref = 4 * n_list[-1]
    if config.time_grid.I < 2 * n_ref:
        log.warning("dt=%g under-resolves chi_k for k up to n_ref=%d", config.dt, n_ref)
    ref_cfg = config.replace(noise_n=n_ref)
    ref_problem = build_problem(ref_cfg, n_draw=n_ref)
    ref = run_fine(ref_problem, keep_paths=True).final
    M = ref_problem.ops.M
    rows, diffs, tails = [], [], []
    for n in n_list + [n_ref]:
        problem = build_problem(config.replace(noise_n=n), kappa=ref_problem.kappa, n_draw=n_ref)
        u = run_fine(problem, keep_paths=True).final if n != n_ref else ref
        D = u - ref
        msq = float(pairwise_mean(np.sum(D * (M @ D), axis=0)[None, :])[0])
        tail = truncation_tail(config.decay if config.noise_form == "fourier" else "none", n)
        rows.append([n, tail, msq])
        if n != n_ref:
            diffs.append(msq)
            tails.append(tail)
    return TruncationStudy(Table(["n", "analytic_tail", "mc_mean_sq_l2_diff"], rows),
                           loglog_slope(n_list, tails), loglog_slope(n_list, diffs), n_ref)


def save_result(result: RunResult, out_dir, grid_nx: int | None = None) -> list:
    """Mean fields, errors CSV, metadata JSON and wall times; returns written paths."""
    from .assembly import expand
    from .fields import write_field

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = FineGrid(grid_nx or result.config.nx)
    written = []
    for name, v in (("mean_fine.txt", result.mean_fine), ("mean_coarse.txt", result.mean_coarse)):
        write_field(ScalarField(grid, expand(v, grid), kind="nodal"), out / name)
        written.append(out / name)
    for t, (uf, uc) in sorted(result.snapshots.items()):
        for tag, v in (("fine", uf), ("coarse", uc)):
            name = out / f"snapshot_{tag}_t{t:g}.txt"
            write_field(ScalarField(grid, expand(v, grid), kind="nodal"), name)
            written.append(name)
    t = Table(["eps_l2", "eps_a", "Lambda", "n_ms", "n_f"],
              [[result.eps_l2, result.eps_a, result.Lambda, result.n_ms, result.n_f]])
    t.to_csv(out / "errors.csv")
    written.append(out / "errors.csv")
    if result.series is not None:
        Table(["t", "eps_l2", "eps_a"],
              [[float(t), float(a), float(b)] for t, (a, b) in zip(result.times, result.series)]
              ).to_csv(out / "series.csv")
        written.append(out / "series.csv")
    (out / "metadata.json").write_text(json.dumps(result.metadata(), indent=2, sort_keys=True))
    (out / "timings.json").write_text(json.dumps(
        {"wall_times": result.wall_times, "threads": result.config.threads}, indent=2))
    written += [out / "metadata.json", out / "timings.json"]
    return written
