"""Brownian paths and truncated series representations of temporal white noise."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .errors import InvalidArgument

DECAY_RULES = ("k32", "exp", "none")
FORMS = ("cons", "fourier")

# spawn-key tags so that every consumer of the master seed gets its own stream
STREAM_FIELD = 1
STREAM_NOISE = 2
STREAM_BROWNIAN = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for (seed, key...), independent of call order."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    return stream(seed, STREAM_NOISE, path_id)


@dataclass(frozen=True)
class NoiseSpec:
    form: str = "fourier"
    n: int = 32
    decay: str = "k32"
    T: float = 0.1
    # sqrt(2) sin(k pi t) as printed, instead of the orthonormal sqrt(2/T) sin(k pi t / T)
    literal_chi: bool = False

    def __post_init__(self):
        if self.form not in FORMS:
            raise InvalidArgument(f"noise form must be one of {FORMS}, got {self.form!r}")
        if self.decay not in DECAY_RULES:
            raise InvalidArgument(f"decay rule must be one of {DECAY_RULES}, got {self.decay!r}")
        if self.n < 0:
            raise InvalidArgument(f"truncation n must be >= 0, got {self.n}")
        if self.T <= 0:
            raise InvalidArgument(f"horizon T must be positive, got {self.T}")

    @property
    def gammas(self) -> np.ndarray:
        k = np.arange(1, self.n + 1)
        if self.form == "cons":
            return np.ones(self.n)
        return _rule(self.decay, k)


@dataclass(frozen=True)
class BrownianPath:
    times: np.ndarray
    increments: np.ndarray
    W: np.ndarray


@dataclass(frozen=True)
class NoisePath:
    eta: np.ndarray
    times: np.ndarray
    wdot: np.ndarray
    seed: int | None = None
    path_id: int | None = None


def sample_brownian(T: float, I: int, rng: np.random.Generator) -> BrownianPath:
    if I < 1:
        raise InvalidArgument(f"need at least one time step, got I={I}")
    dt = T / I
    inc = rng.standard_normal(I) * np.sqrt(dt)
    W = np.concatenate([[0.0], np.cumsum(inc)])
    return BrownianPath(np.linspace(0.0, T, I + 1), inc, W)


def basis_chi(k, t, T: float, literal: bool = False):
    """Sine basis on [0, T]; orthonormal unless `literal`."""
    k = np.asarray(k)
    t = np.asarray(t, dtype=float)
    if np.any(k < 1):
        raise InvalidArgument("basis index k starts at 1")
    if literal:
        return np.sqrt(2.0) * np.sin(k * np.pi * t)
    return np.sqrt(2.0 / T) * np.sin(k * np.pi * t / T)


def _rule(rule: str, k):
    k = np.asarray(k, dtype=float)
    if rule == "k32":
        return k ** -1.5
    if rule == "exp":
        return 2.0 ** -k
    if rule == "none":
        return np.ones_like(k)
    raise InvalidArgument(f"unknown decay rule {rule!r}; expected one of {DECAY_RULES}")


def gamma_coeff(rule: str, k: int, n: int) -> float:
    if k < 1:
        raise InvalidArgument("coefficient index k starts at 1")
    value = float(_rule(rule, k))
    return value if k <= n else 0.0


def evaluate_noise(spec: NoiseSpec, eta: np.ndarray, times) -> np.ndarray:
    """sum_k gamma_k eta_k chi_k(t) at each time (uses the first spec.n etas)."""
    times = np.asarray(times, dtype=float)
    if spec.n == 0:
        return np.zeros_like(times)
    k = np.arange(1, spec.n + 1)
    chi = basis_chi(k[None, :], times[:, None], spec.T, spec.literal_chi)
    return chi @ (spec.gammas * np.asarray(eta)[: spec.n])


def sample_truncated_noise(spec: NoiseSpec, times, rng: np.random.Generator,
                           eta: np.ndarray | None = None) -> NoisePath:
    times = np.asarray(times, dtype=float)
    if eta is None:
        eta = rng.standard_normal(spec.n)
    eta = np.asarray(eta, dtype=float)[: spec.n]
    return NoisePath(eta, times, evaluate_noise(spec, eta, times))


def noise_paths(spec: NoiseSpec, times, seed: int, count: int, n_draw: int | None = None):
    """`count` independent paths; path p depends only on (seed, p).

    `n_draw` >= spec.n draws that many Gaussians per path so that paths with
    different truncations share their leading coordinates.
    """
    n_draw = spec.n if n_draw is None else n_draw
    if n_draw < spec.n:
        raise InvalidArgument(f"n_draw={n_draw} is smaller than the truncation {spec.n}")
    out = []
    for p in range(count):
        eta = path_rng(seed, p).standard_normal(n_draw)
        path = sample_truncated_noise(spec, times, None, eta=eta)
        out.append(NoisePath(path.eta, path.times, path.wdot, seed, p))
    return out


def truncation_tail(rule: str, n: int) -> float:
    """sum_{k>n} (gamma_k / k)^2."""
    if n < 0:
        raise InvalidArgument(f"n must be >= 0, got {n}")
    if rule == "k32":
        return float(zeta(5.0, n + 1))
    if rule == "none":
        return float(zeta(2.0, n + 1))
    if rule == "exp":
        total, k = 0.0, n + 1
        while True:
            term = 4.0 ** -k / (k * k)
            total += term
            if term <= 1e-17 * total:
                return total
            k += 1
    raise InvalidArgument(f"unknown decay rule {rule!r}; expected one of {DECAY_RULES}")


def total_variation(values) -> float:
    return float(np.abs(np.diff(np.asarray(values))).sum())


def write_path_csv(path: NoisePath, filename) -> None:
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "wdot"])
        for t, v in zip(path.times, path.wdot):
            w.writerow([repr(float(t)), repr(float(v))])
