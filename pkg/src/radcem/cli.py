"""Command-line front end.

Config files are TOML. Top-level keys are the ExperimentConfig fields
(nx, Nx, layers, n_basis, field, contrast, background, period, mask_file,
inclusions, r_min, r_max, overlap, field_file, sigma, noise_form, noise_n,
decay, literal_chi, dt, T, paths, seed, threads, fine_solver, coarse_solver,
snapshots). An optional [sweep] table holds the sweep lists: contrasts,
layer_list, basis_counts, inclusion_counts, truncation_levels. Unknown keys
are rejected. Command-line flags override the file.

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 solver or placement failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .errors import InvalidArgument, InvariantViolation, PlacementFailure, SolverFailure
from .fields import contrast, write_field
from .grid import FineGrid
from .noise import noise_paths, write_path_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SWEEP_DEFAULTS = {
    "contrasts": [1e5, 1e6, 1e7, 1e8, 1e9],
    "layer_list": [3, 4, 5],
    "basis_counts": [2, 3, 4, 6, 7, 8],
    "inclusion_counts": [10, 20, 30, 40],
    "truncation_levels": [8, 16, 32, 64],
}
SWEEP_KINDS = ("contrast", "basis", "layers", "truncation", "inclusions", "energy-series")

_FIELDS = {f.name: f for f in dataclasses.fields(ex.ExperimentConfig)}
_DEFAULTS = ex.ExperimentConfig()


class ConfigError(InvalidArgument):
    pass


def _check_type(key, value):
    default = getattr(_DEFAULTS, key)
    if key == "snapshots":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"config key '{key}' must be a list of numbers")
        return tuple(float(v) for v in value)
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and key not in ("layers",):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float) or key == "sigma":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif key == "layers":
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"config key '{key}' has invalid value {value!r}")
    return value


def parse_config(doc: dict) -> tuple[dict, dict]:
    """Validate a parsed TOML document; returns (config kwargs, sweep lists)."""
    kwargs, sweep = {}, dict(SWEEP_DEFAULTS)
    for key, value in doc.items():
        if key == "sweep":
            if not isinstance(value, dict):
                raise ConfigError("config key 'sweep' must be a table")
            for k, v in value.items():
                if k not in SWEEP_DEFAULTS:
                    raise ConfigError(f"unknown config key 'sweep.{k}'")
                if not isinstance(v, list) or not v:
                    raise ConfigError(f"config key 'sweep.{k}' must be a non-empty list")
                sweep[k] = v
        elif key in _FIELDS:
            kwargs[key] = _check_type(key, value)
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return kwargs, sweep


def load_config_file(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"--snapshots expects comma-separated numbers, got {text!r}") from exc


def _common(p):
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--noise-form", choices=("cons", "fourier"))
    p.add_argument("--noise-n", type=int)
    p.add_argument("--decay", choices=("k32", "exp", "none"))
    p.add_argument("--nx", type=int)
    p.add_argument("--Nx", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--basis", type=int)
    p.add_argument("--contrast", type=float)
    p.add_argument("--field", choices=ex.FIELD_KINDS)
    p.add_argument("--period", type=float)
    p.add_argument("--inclusions", type=int)
    p.add_argument("--field-file", type=Path)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--snapshots", type=str)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radcem", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-field", help="write a coefficient field dump")
    _common(g)
    r = sub.add_parser("run", help="fine vs multiscale Monte Carlo run")
    _common(r)
    r.add_argument("--series", action="store_true", help="also record per-time errors")
    s = sub.add_parser("sweep", help="parameter sweep to CSV")
    s.add_argument("kind", choices=SWEEP_KINDS)
    s.add_argument("--values", type=str, help="comma-separated sweep values")
    _common(s)
    n = sub.add_parser("noise", help="write truncated noise paths as CSV")
    _common(n)
    c = sub.add_parser("compare", help="relative L2 distance between two nodal field dumps")
    c.add_argument("test", type=Path)
    c.add_argument("reference", type=Path)
    return parser


def resolve_config(args) -> tuple[ex.ExperimentConfig, dict]:
    kwargs, sweep = load_config_file(args.config) if args.config else ({}, dict(SWEEP_DEFAULTS))
    flags = {"seed": args.seed, "paths": args.paths, "threads": args.threads,
             "noise_form": args.noise_form, "noise_n": args.noise_n, "decay": args.decay,
             "nx": args.nx, "Nx": args.Nx, "layers": args.layers, "n_basis": args.basis,
             "contrast": args.contrast, "field": args.field, "period": args.period,
             "inclusions": args.inclusions, "dt": args.dt, "T": args.T}
    kwargs.update({k: v for k, v in flags.items() if v is not None})
    if args.field_file is not None:
        kwargs["field"] = "file"
        kwargs["field_file"] = str(args.field_file)
    if args.snapshots:
        kwargs["snapshots"] = _floats(args.snapshots)
    return ex.ExperimentConfig(**kwargs), sweep


def _out_dir(args) -> Path:
    out = args.out or Path("radcem_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_field(args) -> int:
    if args.Nx is None:
        args.Nx = 1  # the coarse grid plays no part in field generation
    cfg, _ = resolve_config(args)
    grid = FineGrid(cfg.nx)
    kappa = ex.build_kappa(cfg, grid)
    if args.dry_run:
        print(json.dumps(cfg.as_dict(), indent=2))
        return 0
    out = args.out or Path("kappa.txt")
    if out.is_dir():
        out = out / "kappa.txt"
    write_field(kappa, out)
    print(f"wrote {out}: min={kappa.values.min():g} max={kappa.values.max():g} "
          f"contrast={contrast(kappa):g}")
    return 0


def _dry_run(cfg: ex.ExperimentConfig) -> int:
    grid = FineGrid(cfg.nx)
    info = {"config": cfg.as_dict(), "resolved_layers": cfg.resolved_layers,
            "n_f": grid.n_interior, "n_ms": cfg.Nx * cfg.Nx * cfg.n_basis,
            "time_steps": cfg.time_grid.I}
    print(json.dumps(info, indent=2))
    return 0


def cmd_run(args) -> int:
    cfg, _ = resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    result = ex.run_mc(cfg, series=args.series)
    for path in ex.save_result(result, _out_dir(args)):
        print(f"wrote {path}")
    print(f"eps_l2={result.eps_l2:.6e} eps_a={result.eps_a:.6e} Lambda={result.Lambda:.6g} "
          f"n_ms={result.n_ms} n_f={result.n_f}")
    return 0


def cmd_sweep(args) -> int:
    cfg, sweep = resolve_config(args)
    key = {"contrast": "contrasts", "layers": "layer_list", "basis": "basis_counts",
           "energy-series": "basis_counts", "inclusions": "inclusion_counts",
           "truncation": "truncation_levels"}[args.kind]
    values = list(_floats(args.values)) if args.values else list(sweep[key])
    if args.dry_run:
        return _dry_run(cfg)
    ints = [int(v) for v in values]
    if args.kind == "contrast":
        table = ex.sweep_contrast(cfg, values, [int(v) for v in sweep["layer_list"]])
    elif args.kind == "layers":
        table = ex.sweep_layers(cfg, ints)
    elif args.kind == "basis":
        table = ex.sweep_basis(cfg, ints).table
    elif args.kind == "energy-series":
        table = ex.energy_error_series(cfg, ints)
    elif args.kind == "inclusions":
        table = ex.sweep_inclusions(cfg, ints)
    else:
        study = ex.truncation_study(cfg, ints)
        table = study.table
        print(f"analytic slope={study.analytic_slope:.4f} mc slope={study.mc_slope:.4f}")
    out = _out_dir(args) / f"sweep_{args.kind}.csv"
    table.to_csv(out)
    print(f"wrote {out}")
    return 0


def cmd_noise(args) -> int:
    cfg, _ = resolve_config(args)
    if args.dry_run:
        return _dry_run(cfg)
    out = _out_dir(args)
    for p in noise_paths(cfg.noise_spec, cfg.time_grid.times[1:], cfg.seed, cfg.paths):
        name = out / f"noise_path_{p.path_id}.csv"
        write_path_csv(p, name)
        print(f"wrote {name}")
    return 0


def _read_nodal(path) -> np.ndarray:
    with open(path) as fh:
        head = fh.readline().split()
        vals = np.loadtxt(fh, ndmin=1)
    if len(head) != 2:
        raise InvalidArgument(f"{path}: missing 'n n' header")
    return vals


def cmd_compare(args) -> int:
    a, b = _read_nodal(args.test), _read_nodal(args.reference)
    if a.shape != b.shape:
        raise InvalidArgument(f"field sizes differ: {a.size} vs {b.size}")
    n = int(round(np.sqrt(a.size))) - 1
    from .assembly import assemble_mass
    M = assemble_mass(FineGrid(n))
    d = a - b
    print(f"relative_l2={np.sqrt(d @ (M @ d) / (b @ (M @ b))):.6e}")
    return 0


COMMANDS = {"gen-field": cmd_gen_field, "run": cmd_run, "sweep": cmd_sweep,
            "noise": cmd_noise, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, InvariantViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, PlacementFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
