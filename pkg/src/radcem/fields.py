"""Piecewise-constant coefficient fields on fine cells."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, InvariantViolation, PlacementFailure
from .grid import FineGrid


@dataclass(frozen=True)
class ScalarField:
    """One value per fine cell (``kind='coefficient'``) or per node (``'nodal'``)."""

    grid: FineGrid
    values: np.ndarray
    kind: str = "coefficient"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        expected = self.grid.n_cells if self.kind == "coefficient" else self.grid.n_nodes
        if vals.shape != (expected,):
            raise InvalidArgument(f"{self.kind} field needs {expected} values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvariantViolation("field has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def as_image(self) -> np.ndarray:
        n = self.grid.nx if self.kind == "coefficient" else self.grid.nx + 1
        return self.values.reshape(n, n)

    def scaled(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, c * self.values, self.kind)


@dataclass(frozen=True)
class PeriodicSpec:
    period: float
    background: float = 1.0
    inclusion: float = 1e5
    # per-period mask, sampled at tile-relative cell centres; None -> centred disk
    mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.period <= 0 or self.period > 1:
            raise InvalidArgument(f"period must lie in (0, 1], got {self.period}")
        _check_values(self.background, self.inclusion)


@dataclass(frozen=True)
class InclusionSpec:
    count: int
    r_min: float = 0.05
    r_max: float = 0.1
    background: float = 1.0
    inclusion: float = 1e5
    overlap_allowed: bool = False
    seed: int | None = None
    max_attempts: int = 10000

    def __post_init__(self):
        if self.count < 0:
            raise InvalidArgument(f"inclusion count must be >= 0, got {self.count}")
        if not 0 < self.r_min <= self.r_max:
            raise InvalidArgument(f"need 0 < r_min <= r_max, got [{self.r_min}, {self.r_max}]")
        _check_values(self.background, self.inclusion)


def _check_values(background, inclusion):
    if not 0 < background <= inclusion:
        raise InvalidArgument(
            f"need 0 < background <= inclusion value, got {background}, {inclusion}")


def disk_mask(resolution: int, diameter: float = 0.5) -> np.ndarray:
    """Boolean tile with a centred disk; `diameter` is a fraction of the tile side."""
    t = (np.arange(resolution) + 0.5) / resolution - 0.5
    x, y = np.meshgrid(t, t)
    return x * x + y * y <= (0.5 * diameter) ** 2


def gen_periodic(grid: FineGrid, spec: PeriodicSpec) -> ScalarField:
    cells = grid.nx * spec.period
    p = int(round(cells))
    if p < 1 or abs(cells - p) > 1e-9 or grid.nx % p:
        raise InvalidArgument(
            f"period {spec.period} does not tile nx={grid.nx}: nx*period={cells:g} "
            "must be a positive integer dividing nx")
    if spec.mask is None:
        tile = disk_mask(p)
    else:
        mask = np.asarray(spec.mask, dtype=bool)
        # nearest sampling of a mask given at any resolution
        ry = ((np.arange(p) + 0.5) * mask.shape[0] / p).astype(int)
        rx = ((np.arange(p) + 0.5) * mask.shape[1] / p).astype(int)
        tile = mask[np.ix_(ry, rx)]
    reps = grid.nx // p
    img = np.where(np.tile(tile, (reps, reps)), spec.inclusion, spec.background)
    return ScalarField(grid, img.ravel())


def place_disks(spec: InclusionSpec, rng: np.random.Generator) -> np.ndarray:
    """(count, 3) array of (cx, cy, r) drawn uniformly; rejection sampling if disjoint."""
    disks = np.empty((spec.count, 3))
    for k in range(spec.count):
        for _ in range(spec.max_attempts):
            cx, cy = rng.uniform(0.0, 1.0, size=2)
            r = rng.uniform(spec.r_min, spec.r_max)
            if spec.overlap_allowed or k == 0:
                break
            d = np.hypot(disks[:k, 0] - cx, disks[:k, 1] - cy)
            if np.all(d > disks[:k, 2] + r):
                break
        else:
            raise PlacementFailure(
                f"placed {k} of {spec.count} disjoint inclusions before giving up "
                f"({spec.max_attempts} attempts)", placed=k)
        disks[k] = cx, cy, r
    return disks


def gen_inclusions(grid: FineGrid, spec: InclusionSpec,
                   rng: np.random.Generator | None = None) -> ScalarField:
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    disks = place_disks(spec, rng)
    return inclusion_field(grid, disks, spec.background, spec.inclusion)


def inclusion_field(grid: FineGrid, disks: np.ndarray, background: float,
                    inclusion: float) -> ScalarField:
    c = grid.cell_centers
    inside = np.zeros(grid.n_cells, dtype=bool)
    for cx, cy, r in np.reshape(disks, (-1, 3)):
        inside |= (c[:, 0] - cx) ** 2 + (c[:, 1] - cy) ** 2 <= r * r
    return ScalarField(grid, np.where(inside, inclusion, background))


def contrast(field: ScalarField) -> float:
    lo = field.values.min()
    if lo <= 0:
        raise InvariantViolation(f"coefficient field must be positive, min is {lo}")
    return float(field.values.max() / lo)


def write_field(field: ScalarField, path) -> None:
    """Header ``nx ny`` then one value per line, row-major, round-trip precision."""
    n = field.grid.nx if field.kind == "coefficient" else field.grid.nx + 1
    lines = [f"{n} {n}"] + [repr(float(v)) for v in field.values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path, grid: FineGrid | None = None) -> ScalarField:
    tokens = Path(path).read_text().split()
    if len(tokens) < 2:
        raise InvalidArgument(f"{path}: missing 'nx ny' header")
    nx, ny = int(tokens[0]), int(tokens[1])
    if nx != ny:
        raise InvalidArgument(f"{path}: only square fields are supported, got {nx}x{ny}")
    vals = np.array([float(t) for t in tokens[2:]])
    if vals.size != nx * ny:
        raise InvalidArgument(f"{path}: expected {nx * ny} values, found {vals.size}")
    if grid is None:
        grid = FineGrid(nx)
    elif grid.nx != nx:
        raise InvalidArgument(f"{path}: field is {nx}x{ny} but grid has nx={grid.nx}")
    return ScalarField(grid, vals)
