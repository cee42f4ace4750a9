"""Keane-O'Brien Bernoulli factory.

Given a continuous, polynomially bounded ``f: [0,1] -> [0,1]`` the factory is
driven by a sequence of levels.  Level ``k`` stores an integer ``eta_k`` and an
indicator table ``I_k[j] = 1{f_k(j / eta_k) >= 1/2}``; the functions ``f_k``
follow

    f_1 = f,    f_{k+1}(p) = 4/3 * (f_k(p) - B_k(p) / 4),

where ``B_k(p) = sum_j I_k[j] C(eta_k, j) p^j (1-p)^(eta_k-j)`` is the chance that
``eta_k`` p-coins land on a set bit.  A draw ``L ~ Geo(1/4)`` followed by
``eta_L`` p-coins and a table lookup is an exact f(p)-coin.

``B_k`` is evaluated as a sum of binomial interval probabilities over the runs
of set bits, so evaluation cost scales with the number of runs rather than with
``eta_k``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import bdtr, bdtrc, gammaln

from .core_random import (
    RandomStream,
    SummaryStats,
    map_chunks,
    sample_binomial,
    sample_geometric_quarter,
    summarize,
)

log = logging.getLogger(__name__)

TABLE_FORMAT_VERSION = 1
_MAGIC = b"KOBTABLE\n"


class FactoryError(Exception):
    pass


class PolyBoundViolation(FactoryError):
    """f is not polynomially bounded with exponent <= n_max on the grid."""

    def __init__(self, name: str, p: float, margin: float, n_max: int):
        self.p = p
        self.margin = margin
        self.n_max = n_max
        super().__init__(
            f"{name}: min(f, 1-f) >= min(p, 1-p)^n fails for every n <= {n_max}; "
            f"witness p={p:.6g}, margin={margin:.3g}"
        )


class EtaSearchExhausted(FactoryError):
    def __init__(self, level: int, eta_max: int):
        self.level = level
        super().__init__(f"level {level}: no eta <= {eta_max} passes the bracket check")


class LevelRangeViolation(FactoryError):
    def __init__(self, level: int, lo: float, hi: float):
        self.level = level
        super().__init__(f"f_{level} leaves [0, 1] on the grid (min={lo:.3g}, max={hi:.3g})")


class LevelCapExceeded(FactoryError):
    def __init__(self, level: int, k_max: int):
        self.level = level
        super().__init__(f"geometric level {level} exceeds table depth {k_max}")


@dataclass(frozen=True)
class TargetFunction:
    evaluator: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float
    name: str

    def __call__(self, p):
        p_arr = np.asarray(p, dtype=float)
        v = np.asarray(self.evaluator(p_arr), dtype=float)
        v = np.broadcast_to(v, p_arr.shape).copy()
        return float(v) if v.ndim == 0 else v

    def validate(self, grid_points: int = 4097, tol: float = 1e-12) -> None:
        """Spot-check range and Lipschitz bound on a uniform grid."""
        p = np.linspace(0.0, 1.0, grid_points)
        v = self(p)
        if v.min() < -tol or v.max() > 1.0 + tol:
            raise ValueError(f"{self.name} leaves [0, 1]")
        slope = np.abs(np.diff(v)) / np.diff(p)
        if slope.max() > self.lipschitz_bound * (1.0 + 1e-9) + tol:
            raise ValueError(f"{self.name}: grid slope {slope.max():.4g} exceeds bound {self.lipschitz_bound}")


@dataclass(frozen=True)
class PolyBoundCertificate:
    exponent: int
    verified_grid_size: int
    mode: str  # "certified-grid" or "heuristic"
    degenerate: float | None = None  # 0.0 or 1.0 for constant targets


def check_poly_bound(f: TargetFunction, n_max: int = 16, grid_points: int = 4097, tol: float = 1e-12) -> PolyBoundCertificate:
    """Smallest n <= n_max with min(f, 1-f) >= min(p, 1-p)^n on the grid.

    Constant targets 0 and 1 are accepted as degenerate.  Raises
    :class:`PolyBoundViolation` with the worst grid point otherwise.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    p = np.linspace(0.0, 1.0, grid_points)
    v = f(p)
    if np.all(v == 0.0) or np.all(v == 1.0):
        return PolyBoundCertificate(1, grid_points, "certified-grid", degenerate=float(v[0]))
    lhs = np.minimum(v, 1.0 - v)
    base = np.minimum(p, 1.0 - p)
    for n in range(1, n_max + 1):
        margin = lhs - base**n
        if margin.min() >= -tol:
            mode = "certified-grid" if margin.min() >= 0.0 else "heuristic"
            return PolyBoundCertificate(n, grid_points, mode)
    i = int(np.argmin(margin))
    raise PolyBoundViolation(f.name, float(p[i]), float(margin[i]), n_max)


@dataclass(frozen=True)
class EtaSearchConfig:
    grid_points: int = 4097
    eta_max: int = 1 << 17
    levels: int = 40
    tolerance: float = 1e-12
    mode: str = "certified"
    window_factor: int = 16
    max_refine_depth: int = 30
    max_refine_points: int = 4_000_000
    tie_tolerance: float = 1e-12

    def __post_init__(self):
        if self.grid_points < 3:
            raise ValueError("grid_points must be >= 3")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.mode not in ("certified", "heuristic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.levels < 1 or self.eta_max < 1:
            raise ValueError("levels and eta_max must be positive")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def level_tolerance(cfg: EtaSearchConfig, k: int) -> float:
    """Slack for level k; the recursion amplifies f-scale errors by 4/3 per level."""
    return cfg.tolerance * (4.0 / 3.0) ** (k - 1)


def _runs(indicator: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start and (inclusive) end indices of the runs of ones."""
    padded = np.concatenate(([0], indicator.astype(np.int8), [0]))
    d = np.diff(padded)
    return np.flatnonzero(d == 1), np.flatnonzero(d == -1) - 1


@dataclass(frozen=True)
class FactoryLevel:
    level_index: int
    eta: int
    indicator_table: np.ndarray
    lipschitz_bound: float
    certification: str = "heuristic"
    refined_points: int = 0
    run_starts: np.ndarray = field(init=False, repr=False, compare=False)
    run_ends: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ind = np.ascontiguousarray(self.indicator_table, dtype=np.uint8)
        if ind.shape != (self.eta + 1,) or self.eta < 1:
            raise ValueError("indicator table must have length eta + 1, eta >= 1")
        if np.any(ind > 1):
            raise ValueError("indicator entries must be 0 or 1")
        ind.setflags(write=False)
        object.__setattr__(self, "indicator_table", ind)
        starts, ends = _runs(ind)
        object.__setattr__(self, "run_starts", starts)
        object.__setattr__(self, "run_ends", ends)

    def set_probability(self, p) -> np.ndarray:
        """P(Bin(eta, p) lands on a set bit), i.e. B_k(p)."""
        return binomial_set_probability(self.eta, self.run_starts, self.run_ends, p)

    def decide(self, ones: int) -> int:
        return int(self.indicator_table[ones])


def binomial_set_probability(eta: int, starts: Sequence[int], ends: Sequence[int], p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    total = np.zeros_like(p)
    for a, b in zip(starts, ends):
        a, b = int(a), int(b)
        if a == 0 and b == eta:
            total += 1.0
        elif a == 0:
            total += bdtr(b, eta, p)
        elif b == eta:
            total += bdtrc(a - 1, eta, p)
        else:
            # take the difference on the side with the smaller tail
            left = p * eta < 0.5 * (a + b)
            if left.all():
                total += bdtr(b, eta, p) - bdtr(a - 1, eta, p)
            elif not left.any():
                total += bdtrc(a - 1, eta, p) - bdtrc(b, eta, p)
            else:
                pl, pr = p[left], p[~left]
                total[left] += bdtr(b, eta, pl) - bdtr(a - 1, eta, pl)
                total[~left] += bdtrc(a - 1, eta, pr) - bdtrc(b, eta, pr)
    return total


class SeriesValue(NamedTuple):
    partial: float | np.ndarray
    tail_bound: float


class Announcement(NamedTuple):
    coin_count: int
    decision: "LevelDecision"


@dataclass(frozen=True)
class LevelDecision:
    """Pure map from the number of A-coins (or the coin bits) to the output bit."""

    level: int
    indicator_table: np.ndarray

    def __call__(self, coins) -> int:
        ones = int(coins) if np.ndim(coins) == 0 else int(np.sum(coins))
        return int(self.indicator_table[ones])


@dataclass(frozen=True)
class FactoryTable:
    target: TargetFunction
    levels: tuple[FactoryLevel, ...]
    build_config: EtaSearchConfig
    certificate: PolyBoundCertificate | None = None
    warnings: tuple[str, ...] = ()
    _flat: np.ndarray = field(init=False, repr=False, compare=False)
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)
    _etas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        etas = np.array([lv.eta for lv in self.levels], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(etas + 1)[:-1])).astype(np.int64) if len(etas) else np.zeros(0, np.int64)
        flat = np.concatenate([lv.indicator_table for lv in self.levels]) if self.levels else np.zeros(0, np.uint8)
        object.__setattr__(self, "_etas", etas)
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_flat", flat)

    @property
    def k_max(self) -> int:
        return len(self.levels)

    @property
    def degenerate(self) -> float | None:
        return None if self.certificate is None else self.certificate.degenerate

    @property
    def etas(self) -> np.ndarray:
        return self._etas

    def level(self, k: int) -> FactoryLevel:
        if not 1 <= k <= self.k_max:
            raise IndexError(f"level {k} outside 1..{self.k_max}")
        return self.levels[k - 1]

    def decision_probability(self, levels: np.ndarray, ones: np.ndarray) -> np.ndarray:
        """Vectorized indicator lookup ``I_level[ones]`` (levels are 1-based)."""
        return self._flat[self._offsets[levels - 1] + ones]

    def digest(self) -> str:
        return hashlib.sha256(serialize_table(self)).hexdigest()

    def to_bytes(self) -> bytes:
        return serialize_table(self)


def _f_values(target: TargetFunction, levels: Sequence[FactoryLevel], k: int, p) -> np.ndarray:
    """f_k(p) using only the first k-1 levels."""
    v = np.asarray(target(np.asarray(p, dtype=float)), dtype=float)
    for lv in levels[: k - 1]:
        v = (4.0 / 3.0) * (v - 0.25 * lv.set_probability(p))
    return v


def eval_level(table: FactoryTable, k: int, p):
    """f_k(p) from the stored indicator tables of levels below k."""
    if not 1 <= k <= table.k_max:
        raise IndexError(f"level {k} outside 1..{table.k_max}")
    out = _f_values(table.target, table.levels, k, p)
    return float(out) if np.ndim(out) == 0 else out


def bracket_value(table: FactoryTable, k: int, p):
    """g_k(p) = f_k(p) - B_k(p)/4, which certified levels keep inside [0, 3/4]."""
    out = _f_values(table.target, table.levels, k, p) - 0.25 * table.level(k).set_probability(p)
    return float(out) if np.ndim(out) == 0 else out


def series_eval(table: FactoryTable, p, K: int | None = None) -> SeriesValue:
    """Partial sum of sum_k (3/4)^(k-1) (1/4) B_k(p) through level K.

    f(p) - partial = (3/4)^K f_{K+1}(p) with f_{K+1}(p) in [0, 1], hence the
    returned tail bound (3/4)^K.
    """
    K = table.k_max if K is None else K
    p_arr = np.asarray(p, dtype=float)
    if table.degenerate is not None:
        partial = np.full_like(p_arr, table.degenerate)
        return SeriesValue(float(partial) if partial.ndim == 0 else partial, 0.0)
    if not 1 <= K <= table.k_max:
        raise IndexError(f"truncation level {K} outside 1..{table.k_max}")
    partial = np.zeros_like(p_arr)
    w = 0.25
    for lv in table.levels[:K]:
        partial = partial + w * lv.set_probability(p_arr)
        w *= 0.75
    return SeriesValue(float(partial) if partial.ndim == 0 else partial, 0.75**K)


# ---------------------------------------------------------------------------
# table construction


def _log_comb(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def _tail_union_bound(eta: int, j0: int | None, x: np.ndarray) -> np.ndarray:
    """min(1, C(eta, j0) x^j0) >= P(Bin(eta, x) >= j0); zero when j0 is None."""
    if j0 is None:
        return np.zeros_like(x)
    if j0 == 0:
        return np.ones_like(x)
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    return np.minimum(1.0, np.exp(_log_comb(eta, j0) + j0 * logx))


class _LevelCertifier:
    """Bracket checks for one level given f_k on the base grid."""

    def __init__(self, target, levels, k, fk_grid, lip, cfg: EtaSearchConfig):
        self.target = target
        self.levels = levels
        self.k = k
        self.grid = np.linspace(0.0, 1.0, cfg.grid_points)
        self.fk_grid = fk_grid
        self.lip = lip
        self.cfg = cfg
        self.tol = level_tolerance(cfg, k)
        self.delta = 1.0 / (cfg.grid_points - 1)
        self.window = min(cfg.window_factor * self.delta, 0.25)
        self._cache: dict[int, tuple[bool, np.ndarray, str, int]] = {}
        w = self.window
        geo = w * 2.0 ** -np.arange(0, 48)
        near0 = np.unique(np.concatenate(([0.0], geo, np.linspace(0.0, w, 257))))
        self.near0 = near0
        self.near1 = np.sort(1.0 - near0)

    def fk(self, p):
        return _f_values(self.target, self.levels, self.k, p)

    def indicator(self, eta: int) -> np.ndarray:
        nodes = np.arange(eta + 1) / eta
        return (self.fk(nodes) >= 0.5 - self.cfg.tie_tolerance).astype(np.uint8)

    def check(self, eta: int):
        if eta not in self._cache:
            self._cache[eta] = self._check(eta)
        return self._cache[eta]

    def _check(self, eta: int):
        tol = self.tol
        ind = self.indicator(eta)
        probe = FactoryLevel(self.k, eta, ind, self.lip)
        g = self.fk_grid - 0.25 * probe.set_probability(self.grid)
        if g.min() < -tol or g.max() > 0.75 + tol:
            return False, ind, "grid", 0
        if self.cfg.mode == "heuristic":
            return True, ind, "heuristic", 0
        if not self._windows_ok(probe):
            return False, ind, "window", 0
        ok, npts = self._interior_ok(probe, g)
        return ok, ind, "certified" if ok else "interior", npts

    def _windows_ok(self, lv: FactoryLevel) -> bool:
        tol = self.tol
        ind = lv.indicator_table
        ones = np.flatnonzero(ind)
        zeros = np.flatnonzero(ind == 0)
        j0 = int(ones[0]) if ones.size else None
        j1 = int(zeros[-1]) if zeros.size else None

        x0 = self.near0
        f0 = self.fk(x0)
        g0 = f0 - 0.25 * lv.set_probability(x0)
        if np.any(f0 - 0.25 * _tail_union_bound(lv.eta, j0, x0) < -tol) or g0.max() > 0.75 + tol:
            return False
        x1 = self.near1
        f1 = self.fk(x1)
        g1 = f1 - 0.25 * lv.set_probability(x1)
        zero_tail = _tail_union_bound(lv.eta, None if j1 is None else lv.eta - j1, 1.0 - x1)
        if np.any((1.0 - f1) - 0.25 * zero_tail < -tol) or g1.min() < -tol:
            return False
        return True

    def _interior_ok(self, lv: FactoryLevel, g_grid: np.ndarray) -> tuple[bool, int]:
        """Lipschitz branch-and-bound for g on [window, 1 - window]."""
        tol = self.tol
        lip = self.lip + lv.eta / 4.0
        inside = (self.grid >= self.window - 1e-15) & (self.grid <= 1.0 - self.window + 1e-15)
        idx = np.flatnonzero(inside)
        a, b = self.grid[idx[:-1]], self.grid[idx[1:]]
        ga, gb = g_grid[idx[:-1]], g_grid[idx[1:]]
        evaluated = 0
        for _ in range(self.cfg.max_refine_depth + 1):
            w = b - a
            lower = 0.5 * (ga + gb - lip * w)
            upper = 0.5 * (ga + gb + lip * w)
            bad = (lower < -tol) | (upper > 0.75 + tol)
            if not bad.any():
                return True, evaluated
            a, b, ga, gb = a[bad], b[bad], ga[bad], gb[bad]
            if evaluated + a.size > self.cfg.max_refine_points:
                return False, evaluated
            m = 0.5 * (a + b)
            gm = self.fk(m) - 0.25 * lv.set_probability(m)
            evaluated += m.size
            if gm.min() < -tol or gm.max() > 0.75 + tol:
                return False, evaluated
            a, b = np.concatenate((a, m)), np.concatenate((m, b))
            ga, gb = np.concatenate((ga, gm)), np.concatenate((gm, gb))
        return False, evaluated


def _search_eta(cert: _LevelCertifier, eta_max: int):
    candidates = []
    eta = 1
    while eta < eta_max:
        candidates.append(eta)
        eta *= 2
    candidates.append(eta_max)
    lo = 0
    hi = None
    for eta in candidates:
        if cert.check(eta)[0]:
            hi = eta
            break
        lo = eta
    if hi is None:
        raise EtaSearchExhausted(cert.k, eta_max)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cert.check(mid)[0]:
            hi = mid
        else:
            lo = mid
    return hi, cert.check(hi)


def build_table(f: TargetFunction, cert: PolyBoundCertificate, cfg: EtaSearchConfig | None = None) -> FactoryTable:
    """Build levels 1..cfg.levels with the doubling-then-bisect eta search."""
    cfg = cfg or EtaSearchConfig()
    warnings: list[str] = []
    if cert.degenerate is not None:
        return FactoryTable(f, (), cfg, cert)
    if cfg.mode == "heuristic":
        warnings.append("eta certified in heuristic mode: raw grid values only, no Lipschitz margins")
    grid = np.linspace(0.0, 1.0, cfg.grid_points)
    fk = f(grid)
    lip = float(f.lipschitz_bound)
    levels: list[FactoryLevel] = []
    for k in range(1, cfg.levels + 1):
        tol = level_tolerance(cfg, k)
        if fk.min() < -tol or fk.max() > 1.0 + tol:
            raise LevelRangeViolation(k, float(fk.min()), float(fk.max()))
        certifier = _LevelCertifier(f, levels, k, fk, lip, cfg)
        eta, (_, ind, how, npts) = _search_eta(certifier, cfg.eta_max)
        level = FactoryLevel(k, eta, ind, lip, certification=how, refined_points=npts)
        levels.append(level)
        log.debug("level %d: eta=%d lip=%.4g (%s, %d refined points)", k, eta, lip, how, npts)
        fk = (4.0 / 3.0) * (fk - 0.25 * level.set_probability(grid))
        lip = (4.0 / 3.0) * (lip + eta / 4.0)
    if cfg.mode == "certified":
        warnings.append(
            "endpoint windows are checked on a refined grid against binomial tail bounds; "
            "this part of the certificate is not a proof"
        )
    return FactoryTable(f, tuple(levels), cfg, cert, tuple(warnings))


# ---------------------------------------------------------------------------
# sampling


class PCoin:
    """i.i.d. Bernoulli(p) coin source that counts its flips."""

    def __init__(self, p: float, rng: RandomStream):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.p = p
        self.rng = rng
        self.flips = 0

    def __call__(self) -> int:
        self.flips += 1
        return int(self.rng.random() < self.p)


def announce_then_decide(table: FactoryTable, rng: RandomStream) -> Announcement:
    """Draw the level and announce the coin count before any coin is seen."""
    if table.degenerate is not None:
        value = int(table.degenerate)
        return Announcement(0, LevelDecision(0, np.array([value], dtype=np.uint8)))
    k = sample_geometric_quarter(rng)
    if k > table.k_max:
        raise LevelCapExceeded(k, table.k_max)
    lv = table.levels[k - 1]
    return Announcement(lv.eta, LevelDecision(k, lv.indicator_table))


def sample(table: FactoryTable, p_coin: Callable[[], int], rng: RandomStream) -> int:
    """One f(p)-coin from the p-coin source ``p_coin`` (Algorithm of Keane & O'Brien)."""
    coin_count, decision = announce_then_decide(table, rng)
    ones = sum(int(p_coin()) for _ in range(coin_count))
    return decision(ones)


def sample_many(table: FactoryTable, p: float, reps: int, rng: RandomStream) -> tuple[np.ndarray, int]:
    """Vectorized factory draws at a known p.

    The eta_L p-coins enter only through their count of ones, which is drawn
    directly as Binomial(eta_L, p).  Draws whose level exceeds the table depth
    are dropped and counted; the second return value is that count.
    """
    if table.degenerate is not None:
        return np.full(reps, int(table.degenerate), dtype=np.uint8), 0
    levels = sample_geometric_quarter(rng, reps)
    ok = levels <= table.k_max
    levels = levels[ok]
    ones = sample_binomial(table.etas[levels - 1], p, rng)
    return table.decision_probability(levels, ones), int(reps - ok.sum())


def estimate(table: FactoryTable, p: float, reps: int, rng: RandomStream, threads: int = 1) -> tuple[SummaryStats, int]:
    """Mean of ``reps`` factory draws and the number of level-cap exclusions."""
    parts = map_chunks(lambda s, n, r: sample_many(table, p, n, r), reps, rng, threads)
    bits = np.concatenate([b for b, _ in parts])
    return summarize(bits), sum(e for _, e in parts)


# ---------------------------------------------------------------------------
# serialization


def serialize_table(table: FactoryTable) -> bytes:
    header = {
        "format_version": TABLE_FORMAT_VERSION,
        "function": table.target.name,
        "lipschitz_bound": table.target.lipschitz_bound,
        "k_max": table.k_max,
        "config": asdict(table.build_config),
        "config_hash": table.build_config.digest(),
        "certificate": None if table.certificate is None else asdict(table.certificate),
        "warnings": list(table.warnings),
        "levels": [
            {
                "eta": lv.eta,
                "lipschitz_bound": lv.lipschitz_bound,
                "certification": lv.certification,
                "refined_points": lv.refined_points,
            }
            for lv in table.levels
        ],
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.packbits(lv.indicator_table).tobytes() for lv in table.levels)
    return _MAGIC + head + b"\n" + body


def save_table(table: FactoryTable, path: str | Path) -> None:
    Path(path).write_bytes(serialize_table(table))


def load_table(path: str | Path, target: TargetFunction | None = None) -> FactoryTable:
    """Read a table; the evaluator is resolved from the registry unless given."""
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise FactoryError(f"{path}: not a factory table")
    rest = raw[len(_MAGIC) :]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    if header["format_version"] != TABLE_FORMAT_VERSION:
        raise FactoryError(f"{path}: unsupported table version {header['format_version']}")
    body = rest[nl + 1 :]
    if target is None:
        from .registry import get_entry

        target = get_entry(header["function"]).target
    elif target.name != header["function"]:
        raise FactoryError(f"table was built for {header['function']!r}, not {target.name!r}")
    levels = []
    pos = 0
    for k, meta in enumerate(header["levels"], start=1):
        nbytes = (meta["eta"] + 1 + 7) // 8
        bits = np.unpackbits(np.frombuffer(body[pos : pos + nbytes], dtype=np.uint8))[: meta["eta"] + 1]
        pos += nbytes
        levels.append(
            FactoryLevel(k, meta["eta"], bits, meta["lipschitz_bound"], meta["certification"], meta["refined_points"])
        )
    if pos != len(body):
        raise FactoryError(f"{path}: trailing or missing indicator bytes")
    cert = header["certificate"]
    return FactoryTable(
        target,
        tuple(levels),
        EtaSearchConfig(**header["config"]),
        None if cert is None else PolyBoundCertificate(**cert),
        tuple(header["warnings"]),
    )
