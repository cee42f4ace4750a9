"""Ancestral block counting, the Bernstein-coefficient process and the duality gap.

Backwards in time a sample of n lineages merges pairwise at rate C(n, 2) and a
lineage is replaced by eta(f, k) potential ancestors at rate sigma n P(L = k).
The vector ``v`` (length n + 1) holds v_i = P(all sampled leaves carry A | i of
the n current ancestors carry A), and

    H(y, v) = <B_{dim(v) - 1}(y), v>

is the duality function linking it to the Wright-Fisher diffusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core_random import (
    RandomStream,
    SummaryStats,
    bernstein_basis,
    hypergeometric_pmf,
    map_chunks,
    sample_geometric_quarter,
    summarize,
)
from .factory import FactoryTable, LevelCapExceeded
from .wright_fisher import DiffusionConfig, simulate_diffusion_batch

DEFAULT_DIM_CAP = 512


class DimensionCapExceeded(Exception):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"dimension exceeded cap {cap}")


@dataclass(frozen=True)
class AncestralState:
    lineage_count: int
    time: float = 0.0

    def __post_init__(self):
        if self.lineage_count < 1:
            raise ValueError("lineage_count must be >= 1")


@dataclass(frozen=True)
class AncestralPath:
    """Piecewise-constant lineage count; ``counts[i]`` holds on [times[i], times[i+1])."""

    times: np.ndarray
    counts: np.ndarray
    horizon: float

    def at(self, t: float) -> AncestralState:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return AncestralState(int(self.counts[i]), t)

    @property
    def final(self) -> AncestralState:
        return AncestralState(int(self.counts[-1]), self.horizon)


@dataclass(frozen=True)
class BernsteinVector:
    coeffs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("coefficient vector must be 1-D and non-empty")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return int(self.coeffs.size)


@dataclass(frozen=True)
class DualityReport:
    lhs: SummaryStats
    rhs: SummaryStats
    z_score: float
    dimension_cap_hits: int
    level_cap_hits: int = 0
    max_excluded_fraction: float = 1e-3

    @property
    def excluded_fraction(self) -> float:
        total = self.rhs.count + self.dimension_cap_hits + self.level_cap_hits
        return (self.dimension_cap_hits + self.level_cap_hits) / total

    @property
    def valid(self) -> bool:
        return self.excluded_fraction <= self.max_excluded_fraction

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "z_score": self.z_score,
            "dimension_cap_hits": self.dimension_cap_hits,
            "level_cap_hits": self.level_cap_hits,
            "excluded_fraction": self.excluded_fraction,
            "valid": self.valid,
        }


def _level(table: FactoryTable, k: int) -> tuple[int, np.ndarray]:
    """(eta, indicator) of level k; a constant target uses zero parents."""
    if table.degenerate is not None:
        return 0, np.array([int(table.degenerate)], dtype=np.uint8)
    lv = table.level(k)
    return lv.eta, lv.indicator_table


def _draw_level(table: FactoryTable, rng: RandomStream) -> int:
    if table.degenerate is not None:
        return 1
    k = sample_geometric_quarter(rng)
    if k > table.k_max:
        raise LevelCapExceeded(k, table.k_max)
    return k


def simulate_block_counting(
    n0: int, sigma: float, table: FactoryTable, horizon: float, rng: RandomStream, cap: int = DEFAULT_DIM_CAP
) -> AncestralPath:
    """Lineage-count jump process up to ``horizon`` by competing exponential clocks."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    t, n = 0.0, n0
    times, counts = [0.0], [n0]
    while True:
        coal = 0.5 * n * (n - 1)
        total = coal + sigma * n
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        if rng.random() * total < coal:
            n -= 1
        else:
            eta, _ = _level(table, _draw_level(table, rng))
            n += eta - 1
            if n > cap:
                raise DimensionCapExceeded(cap)
        times.append(t)
        counts.append(n)
    return AncestralPath(np.array(times), np.array(counts, dtype=np.int64), horizon)


def _coeffs(v) -> np.ndarray:
    return v.coeffs if isinstance(v, BernsteinVector) else np.asarray(v, dtype=float)


def _wrap(v, out: np.ndarray):
    return BernsteinVector(out, v.time) if isinstance(v, BernsteinVector) else out


def coalesce_transform(v):
    """Merge two of n ancestors: v_i -> (i v_{i+1} + (n-1-i) v_i) / (n-1), i < n."""
    c = _coeffs(v)
    n = c.size - 1
    if n < 2:
        raise ValueError("coalescence needs at least two lineages (dim >= 3)")
    i = np.arange(n)
    return _wrap(v, (i * c[1:] + (n - 1 - i) * c[:-1]) / (n - 1))


def _log_hyp_weights(n: int, eta: int) -> np.ndarray:
    """w[r, j] = C(eta, j) C(n-1, r) / C(n+eta-1, r+j), the chance that r+j A-ancestors
    split as j among the eta new parents and r among the n-1 bystanders."""
    r = np.arange(n)[:, None]
    j = np.arange(eta + 1)[None, :]

    def lc(a, b):
        return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)

    return lc(eta, j) + lc(n - 1, r) - lc(n + eta - 1, r + j)


def branch_transform(v, k: int, table: FactoryTable):
    """One lineage replaced by eta(f, k) parents that vote through I_k.

    Entry i of the result (length n + eta) is
    sum_j Hyp(n+eta-1, eta, i)[j] * v[i - j + I_k[j]].
    """
    eta, ind = _level(table, k)
    return _wrap(v, branch_apply(_coeffs(v), eta, ind))


def branch_apply(c: np.ndarray, eta: int, indicator: np.ndarray) -> np.ndarray:
    n = c.size - 1
    if n < 1:
        raise ValueError("branching needs at least one lineage")
    ind = np.asarray(indicator, dtype=np.int64)
    assert ind.size == eta + 1, "indicator length must be eta + 1"
    w = np.exp(_log_hyp_weights(n, eta))
    out = np.zeros(n + eta)
    for r in range(n):
        out[r : r + eta + 1] += w[r] * c[r + ind]
    return out


def duality_function(y: float, v) -> float:
    c = _coeffs(v)
    return float(bernstein_basis(c.size - 1, y) @ c)


def simulate_V(
    v0, sigma: float, table: FactoryTable, horizon: float, rng: RandomStream, dim_cap: int = DEFAULT_DIM_CAP
) -> BernsteinVector:
    """Bernstein-coefficient jump process at time ``horizon``."""
    c = _coeffs(v0).copy()
    t = 0.0
    while True:
        n = c.size - 1
        coal = 0.5 * n * (n - 1)
        total = coal + sigma * n
        if total <= 0.0:
            break
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        if rng.random() * total < coal:
            c = coalesce_transform(c)
        else:
            eta, ind = _level(table, _draw_level(table, rng))
            if c.size + eta - 1 > dim_cap:
                raise DimensionCapExceeded(dim_cap)
            c = branch_apply(c, eta, ind)
    return BernsteinVector(c, horizon)


# ---------------------------------------------------------------------------
# batched V process: rows are replicates, coefficient vectors zero-padded


def _batch_coalesce(V: np.ndarray, n: np.ndarray) -> np.ndarray:
    D = V.shape[1]
    i = np.arange(D - 1)[None, :]
    nn = n[:, None].astype(float)
    out = (i * V[:, 1:] + (nn - 1 - i) * V[:, :-1]) / (nn - 1)
    out[i >= nn] = 0.0
    return out


def _batch_branch(V: np.ndarray, n: np.ndarray, eta: int, ind: np.ndarray) -> np.ndarray:
    R = V.shape[0]
    width = int(n.max()) + eta
    out = np.zeros((R, width))
    j = np.arange(eta + 1)
    ind = np.asarray(ind, dtype=np.int64)
    lc = lambda a, b: gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)  # noqa: E731
    nn = n[:, None].astype(float)
    rows = np.arange(R)[:, None]
    for r in range(int(n.max())):
        live = r < n
        if not live.any():
            break
        with np.errstate(invalid="ignore"):
            logw = lc(eta, j)[None, :] + lc(nn - 1, r) - lc(nn + eta - 1, r + j[None, :])
        w = np.where(live[:, None], np.exp(np.where(live[:, None], logw, 0.0)), 0.0)
        src = V[rows, np.minimum(r + ind[None, :], V.shape[1] - 1)]
        out[:, r : r + eta + 1] += w * src
    return out


def simulate_V_batch(
    v0,
    sigma: float,
    table: FactoryTable,
    horizon: float,
    reps: int,
    rng: RandomStream,
    dim_cap: int = DEFAULT_DIM_CAP,
) -> tuple[list[np.ndarray], int, int]:
    """``reps`` independent copies of :func:`simulate_V` advanced event by event.

    Returns ``(vectors, dimension_cap_hits, level_cap_hits)``; replicates that
    hit a cap are dropped.
    """
    c0 = _coeffs(v0)
    V = np.tile(c0, (reps, 1))
    n = np.full(reps, c0.size - 1, dtype=np.int64)
    t = np.zeros(reps)
    alive = np.ones(reps, dtype=bool)  # still evolving
    dropped_dim = np.zeros(reps, dtype=bool)
    dropped_lvl = np.zeros(reps, dtype=bool)
    gen = rng.generator
    while alive.any():
        idx = np.flatnonzero(alive)
        nn = n[idx]
        coal = 0.5 * nn * (nn - 1)
        total = coal + sigma * nn
        stuck = total <= 0.0
        tt = t[idx] + gen.exponential(1.0, idx.size) / np.where(stuck, 1.0, total)
        done = stuck | (tt >= horizon)
        alive[idx[done]] = False
        t[idx] = tt
        idx, coal, total = idx[~done], coal[~done], total[~done]
        if idx.size == 0:
            break
        is_coal = gen.random(idx.size) * total < coal
        ci = idx[is_coal]
        if ci.size:
            new = _batch_coalesce(V[ci], n[ci])
            V[ci, : new.shape[1]] = new
            V[ci, new.shape[1] :] = 0.0
            n[ci] -= 1
        bi = idx[~is_coal]
        if bi.size:
            if table.degenerate is not None:
                levels = np.ones(bi.size, dtype=np.int64)
            else:
                levels = gen.geometric(0.25, bi.size)
                over = levels > table.k_max
                dropped_lvl[bi[over]] = True
                alive[bi[over]] = False
                bi, levels = bi[~over], levels[~over]
            for k in np.unique(levels):
                rows = bi[levels == k]
                eta, ind = _level(table, int(k))
                too_big = n[rows] + eta + 1 > dim_cap
                dropped_dim[rows[too_big]] = True
                alive[rows[too_big]] = False
                rows = rows[~too_big]
                if rows.size == 0:
                    continue
                new = _batch_branch(V[rows], n[rows], eta, ind)
                if new.shape[1] > V.shape[1]:
                    V = np.pad(V, ((0, 0), (0, new.shape[1] - V.shape[1])))
                V[rows, : new.shape[1]] = new
                V[rows, new.shape[1] :] = 0.0
                n[rows] += eta - 1
    keep = ~(dropped_dim | dropped_lvl)
    vectors = [V[i, : n[i] + 1].copy() for i in np.flatnonzero(keep)]
    return vectors, int(dropped_dim.sum()), int(dropped_lvl.sum())


def dual_side(
    y: float,
    v0,
    sigma: float,
    table: FactoryTable,
    t: float,
    reps: int,
    rng: RandomStream,
    dim_cap: int = DEFAULT_DIM_CAP,
    threads: int = 1,
) -> tuple[np.ndarray, int, int]:
    """Samples of H(y, V_t) started from v0, plus cap-exclusion counts."""

    def block(_s, size, stream):
        vecs, dim_hits, lvl_hits = simulate_V_batch(v0, sigma, table, t, size, stream, dim_cap)
        return np.array([duality_function(y, c) for c in vecs]), dim_hits, lvl_hits

    parts = map_chunks(block, reps, rng, threads)
    return np.concatenate([p[0] for p in parts]), sum(p[1] for p in parts), sum(p[2] for p in parts)


def forward_side(
    y: float,
    v0,
    sigma: float,
    table: FactoryTable,
    t: float,
    reps: int,
    rng: RandomStream,
    dt: float = 1e-3,
    threads: int = 1,
) -> np.ndarray:
    """Samples of H(Y_t, v0) with Y the diffusion started at y."""
    c0 = _coeffs(v0)
    if t == 0:
        return np.full(reps, duality_function(y, c0))
    _, Y = simulate_diffusion_batch(y, t, sigma, table.target, DiffusionConfig(dt=dt), reps, rng, threads=threads)
    return bernstein_basis(c0.size - 1, Y[:, -1]) @ c0


def interpolated_side(
    y: float,
    v0,
    sigma: float,
    table: FactoryTable,
    t: float,
    s: float,
    reps: int,
    rng: RandomStream,
    dt: float = 1e-3,
    dim_cap: int = DEFAULT_DIM_CAP,
    threads: int = 1,
) -> np.ndarray:
    """Samples of H(Y_{t-s}, V_s) with Y from y and V from v0 run independently.

    The duality makes the mean the same for every s in [0, t]; s = 0 is the
    forward side and s = t the dual side.
    """
    if not 0.0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if s == 0.0:
        return forward_side(y, v0, sigma, table, t, reps, rng.child(0), dt, threads)
    if s < t:
        _, Y = simulate_diffusion_batch(y, t - s, sigma, table.target, DiffusionConfig(dt=dt), reps, rng.child(0), threads=threads)
        ys = Y[:, -1]
    else:
        ys = np.full(reps, float(y))

    def block(start, size, stream):
        vecs, _, _ = simulate_V_batch(v0, sigma, table, s, size, stream, dim_cap)
        return vecs

    vecs = [v for part in map_chunks(block, reps, rng.child(1), threads) for v in part]
    # Y and V are independent, so any pairing works; surplus Y draws from capped V paths are dropped
    return np.array([duality_function(yy, c) for yy, c in zip(ys, vecs)])


def duality_gap(
    y: float,
    v0,
    sigma: float,
    table: FactoryTable,
    t: float,
    reps: int,
    rng: RandomStream,
    dt: float = 1e-3,
    dim_cap: int = DEFAULT_DIM_CAP,
    threads: int = 1,
) -> DualityReport:
    """Compare E[H(Y_t, v0) | Y_0 = y] with E[H(y, V_t) | V_0 = v0] by independent simulation."""
    if reps < 2:
        raise ValueError("need at least 2 replicates per side")
    lhs = summarize(forward_side(y, v0, sigma, table, t, reps, rng.child(0), dt, threads))
    rhs_samples, dim_hits, lvl_hits = dual_side(y, v0, sigma, table, t, reps, rng.child(1), dim_cap, threads)
    rhs = summarize(rhs_samples)
    return DualityReport(lhs, rhs, lhs.z_score(rhs), dim_hits, lvl_hits)


def hypergeometric_identity_check(n: int, eta: int, ys=None) -> float:
    """Max pmf gap between (Bin(eta, y), Bin(n-1, y)) and the hypergeometric split
    of Bin(n+eta-1, y) into groups of size eta and n-1."""
    if n < 1 or eta < 0:
        raise ValueError("need n >= 1 and eta >= 0")
    ys = np.round(np.arange(1, 10) / 10, 12) if ys is None else ys
    total = n + eta - 1
    worst = 0.0
    for y in ys:
        def bpmf(m, x):
            return math.comb(m, x) * y**x * (1 - y) ** (m - x)

        lhs = np.array([[bpmf(eta, j) * bpmf(n - 1, k) for k in range(n)] for j in range(eta + 1)])
        rhs = np.zeros_like(lhs)
        for m in range(total + 1):
            split = hypergeometric_pmf(total, eta, m)
            for j in range(eta + 1):
                k = m - j
                if 0 <= k <= n - 1:
                    rhs[j, k] += bpmf(total, m) * split[j]
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst
