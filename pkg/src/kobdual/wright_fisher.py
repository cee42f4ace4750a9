"""Wright-Fisher particle system with factory-mediated selection and its diffusion limit.

Each child in generation k+1 copies a uniformly chosen parent with probability
1 - sigma/N.  Otherwise it announces a factory level L, samples eta(f, L)
parents with replacement and takes the allele the level-L indicator assigns to
the number of A-parents.  The marginal chance of an A child is
``(1 - sigma/N) p + (sigma/N) f(p)``.

Time is measured in units of N generations throughout, so generation k sits at
``k / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import binom

from .core_random import RandomStream, map_chunks
from .factory import FactoryTable, LevelCapExceeded, TargetFunction, announce_then_decide


@dataclass(frozen=True)
class PopulationState:
    alleles: np.ndarray
    generation: int = 0

    def __post_init__(self):
        a = np.array(self.alleles, dtype=np.uint8)
        if a.ndim != 1 or a.size == 0 or np.any(a > 1):
            raise ValueError("alleles must be a non-empty 0/1 vector")
        a.setflags(write=False)
        object.__setattr__(self, "alleles", a)

    @classmethod
    def initial(cls, n_individuals: int, y0: float) -> "PopulationState":
        """floor(N * y0) A-alleles followed by a-alleles."""
        if not 0.0 <= y0 <= 1.0:
            raise ValueError("y0 must lie in [0, 1]")
        ones = int(math.floor(n_individuals * y0 + 1e-12))
        a = np.zeros(n_individuals, dtype=np.uint8)
        a[:ones] = 1
        return cls(a, 0)

    @property
    def n_individuals(self) -> int:
        return int(self.alleles.size)

    @property
    def frequency(self) -> float:
        return float(self.alleles.sum()) / self.alleles.size


@dataclass(frozen=True)
class SelectionModel:
    sigma: float
    table: FactoryTable

    def check(self, n_individuals: int) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.sigma > n_individuals:
            raise ValueError(f"need N >= sigma (N={n_individuals}, sigma={self.sigma})")


@dataclass(frozen=True)
class FrequencyPath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must align")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class DiffusionConfig:
    dt: float = 1e-3
    scheme: str = "euler-maruyama"
    boundary: str = "clamp"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme != "euler-maruyama" or self.boundary != "clamp":
            raise ValueError("only euler-maruyama with clamping is implemented")


def step_generation(state: PopulationState, model: SelectionModel, rng: RandomStream) -> PopulationState:
    """One generation, child by child."""
    N = state.n_individuals
    model.check(N)
    parents_alleles = state.alleles
    selective = rng.random(N) < model.sigma / N
    child = np.empty(N, dtype=np.uint8)
    neutral = np.flatnonzero(~selective)
    child[neutral] = parents_alleles[rng.integers(N, neutral.size)]
    for i in np.flatnonzero(selective):
        coin_count, decision = announce_then_decide(model.table, rng)
        parents = rng.integers(N, coin_count)
        child[i] = decision(int(parents_alleles[parents].sum()))
    return PopulationState(child, state.generation + 1)


def _generations(N: int, horizon: float) -> int:
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    return int(math.floor(N * horizon + 1e-9))


def simulate_frequency_path(
    N: int, y0: float, horizon: float, model: SelectionModel, rng: RandomStream
) -> FrequencyPath:
    """Allele frequency at times k/N, k = 0..floor(N t), from the individual-level model."""
    state = PopulationState.initial(N, y0)
    n_gen = _generations(N, horizon)
    values = np.empty(n_gen + 1)
    values[0] = state.frequency
    for g in range(1, n_gen + 1):
        state = step_generation(state, model, rng)
        values[g] = state.frequency
    return FrequencyPath(np.arange(n_gen + 1) / N, values)


def step_counts(counts: np.ndarray, N: int, model: SelectionModel, rng: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """One generation for many populations at once, tracking only A-counts.

    Equal in law to :func:`step_generation`: the number of selective children
    is Binomial(N, sigma/N), the neutral ones copy a uniform parent, and each
    selective child's parents contribute Binomial(eta_L, p) A-alleles.
    Returns the new counts and a mask of populations in which some child drew
    a level beyond the table depth.
    """
    reps = counts.size
    p = counts / N
    n_sel = rng.generator.binomial(N, model.sigma / N, reps)
    new = rng.generator.binomial(N - n_sel, p)
    capped = np.zeros(reps, dtype=bool)
    total = int(n_sel.sum())
    if total:
        owner = np.repeat(np.arange(reps), n_sel)
        table = model.table
        if table.degenerate is not None:
            bits = np.full(total, int(table.degenerate))
        else:
            levels = rng.generator.geometric(0.25, total)
            over = levels > table.k_max
            if over.any():
                capped[owner[over]] = True
                levels = np.where(over, 1, levels)
            ones = rng.generator.binomial(table.etas[levels - 1], p[owner])
            bits = table.decision_probability(levels, ones).astype(np.int64)
            bits[over] = 0
        new = new + np.bincount(owner, weights=bits, minlength=reps).astype(np.int64)
    return new, capped


def simulate_frequency_paths(
    N: int,
    y0: float,
    horizon: float,
    model: SelectionModel,
    reps: int,
    rng: RandomStream,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Batched particle-system paths.

    Returns ``(times, values, excluded)`` with ``values`` of shape
    ``(kept_reps, floor(N t) + 1)``; replicates that hit the level cap are
    dropped and counted.
    """
    model.check(N)
    n_gen = _generations(N, horizon)
    start = PopulationState.initial(N, y0).alleles.sum()

    def block(_s, size, stream):
        counts = np.full(size, start, dtype=np.int64)
        out = np.empty((size, n_gen + 1))
        out[:, 0] = counts / N
        bad = np.zeros(size, dtype=bool)
        for g in range(1, n_gen + 1):
            counts, capped = step_counts(counts, N, model, stream)
            bad |= capped
            out[:, g] = counts / N
        return out[~bad], int(bad.sum())

    parts = map_chunks(block, reps, rng, threads)
    values = np.concatenate([v for v, _ in parts])
    return np.arange(n_gen + 1) / N, values, sum(e for _, e in parts)


def _em_grid(horizon: float, dt: float) -> tuple[int, float]:
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    return n, horizon / n


def _em_step(y: np.ndarray, sigma: float, f: TargetFunction, h: float, z: np.ndarray) -> np.ndarray:
    drift = sigma * (f(y) - y)
    vol = np.sqrt(np.maximum(y * (1.0 - y), 0.0))
    return np.clip(y + drift * h + vol * math.sqrt(h) * z, 0.0, 1.0)


def simulate_diffusion(
    y0: float, horizon: float, sigma: float, f: TargetFunction, cfg: DiffusionConfig, rng: RandomStream
) -> FrequencyPath:
    """Euler-Maruyama path of dY = sigma (f(Y) - Y) dt + sqrt(Y (1 - Y)) dW, clamped to [0, 1].

    The step is shrunk slightly if needed so the last step lands on ``horizon``.
    """
    if not 0.0 <= y0 <= 1.0:
        raise ValueError("y0 must lie in [0, 1]")
    n, h = _em_grid(horizon, cfg.dt)
    z = rng.normal(n)
    values = np.empty(n + 1)
    y = np.array([float(y0)])
    values[0] = y0
    for i in range(n):
        y = _em_step(y, sigma, f, h, z[i : i + 1])
        values[i + 1] = y[0]
    return FrequencyPath(np.arange(n + 1) * h, values)


def simulate_diffusion_batch(
    y0: float,
    horizon: float,
    sigma: float,
    f: TargetFunction,
    cfg: DiffusionConfig,
    reps: int,
    rng: RandomStream,
    record_times=None,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Many independent Euler-Maruyama paths, recorded at ``record_times``.

    ``record_times`` defaults to the horizon alone; each requested time is
    rounded to the nearest step.  Returns ``(times, values)`` with ``values``
    of shape ``(reps, len(times))``.
    """
    n, h = _em_grid(horizon, cfg.dt)
    rt = np.atleast_1d(np.asarray([horizon] if record_times is None else record_times, dtype=float))
    steps = np.clip(np.rint(rt / h).astype(int), 0, n)

    def block(_s, size, stream):
        y = np.full(size, float(y0))
        out = np.empty((size, steps.size))
        out[:, steps == 0] = y[:, None]
        for i in range(1, n + 1):
            y = _em_step(y, sigma, f, h, stream.normal(size))
            hit = steps == i
            if hit.any():
                out[:, hit] = y[:, None]
        return out

    return steps * h, np.concatenate(map_chunks(block, reps, rng, threads))


def _apply(h: Callable, x):
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(np.asarray(h(x), dtype=float), x.shape)


def discrete_generator_apply(N: int, sigma: float, f: TargetFunction, h: Callable, y: float, cutoff: float = 1e-15) -> float:
    """L^N h(y) = E[h(Y_{k+1}) | Y_k = y] - h(y) for the particle system.

    Conditional on k selective children (Binomial(N, sigma/N)), the new A-count
    is Binomial(N - k, y) + Binomial(k, f(y)).  Selective counts whose weight is
    below ``cutoff`` are dropped and the remaining weights renormalized.
    """
    m = y * N
    if abs(m - round(m)) > 1e-9 or not 0.0 <= y <= 1.0:
        raise ValueError(f"y={y} is not on the 1/{N} grid")
    fy = float(f(y))
    ks = np.arange(N + 1)
    wk = np.exp(binom.logpmf(ks, N, sigma / N))
    keep = np.flatnonzero(wk >= cutoff)
    hvals = _apply(h, np.arange(N + 1) / N)
    acc = 0.0
    for k in keep:
        px = np.exp(binom.logpmf(np.arange(N - k + 1), N - k, y))
        pz = np.exp(binom.logpmf(np.arange(k + 1), k, fy))
        acc += wk[k] * float(np.convolve(px, pz) @ hvals)
    return acc / wk[keep].sum() - float(_apply(h, y))


def limit_generator_apply(
    sigma: float,
    f: TargetFunction,
    h: Callable,
    y: float,
    dh: Callable | None = None,
    d2h: Callable | None = None,
    step: float = 1e-5,
) -> float:
    """sigma (f(y) - y) h'(y) + y (1 - y) h''(y) / 2; derivatives by central differences if absent."""
    if dh is None:
        d1 = (float(_apply(h, y + step)) - float(_apply(h, y - step))) / (2 * step)
    else:
        d1 = float(_apply(dh, y))
    if d2h is None:
        d2 = (float(_apply(h, y + step)) - 2 * float(_apply(h, y)) + float(_apply(h, y - step))) / step**2
    else:
        d2 = float(_apply(d2h, y))
    return sigma * (float(f(y)) - y) * d1 + 0.5 * y * (1.0 - y) * d2
