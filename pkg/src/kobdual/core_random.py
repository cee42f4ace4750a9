"""Seeded randomness, elementary samplers, Bernstein basis and MC summaries.

Every stochastic routine in the package takes a :class:`RandomStream`.  A
stream is identified by ``(seed, stream_id)`` where ``stream_id`` is a tuple
of non-negative integers; child streams extend the tuple.  The bit generator
is Philox (counter based) keyed through ``numpy.random.SeedSequence`` so that
the sample sequence of a stream depends only on its identity, never on which
thread or in which order it is consumed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

#: Replicates are grouped in fixed-size blocks, one substream per block.
DEFAULT_CHUNK = 4096


class RandomStream:
    """A reproducible random substream.

    Owned by exactly one execution context at a time.  Use :meth:`child` to
    derive independent substreams (per replicate block, per grid cell, ...).
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int | Sequence[int] = ()):
        if isinstance(stream_id, (int, np.integer)):
            stream_id = (int(stream_id),)
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = tuple(int(s) for s in stream_id)
        if any(s < 0 for s in self.stream_id):
            raise ValueError("stream ids must be non-negative")
        self._gen: np.random.Generator | None = None

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def child(self, *key: int) -> "RandomStream":
        """Independent substream ``stream_id + key``."""
        return RandomStream(self.seed, self.stream_id + tuple(int(k) for k in key))

    # thin conveniences, all routed through the same generator
    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def integers(self, high: int, size=None):
        return self.generator.integers(0, high, size)


@dataclass(frozen=True)
class SummaryStats:
    count: int
    mean: float
    std_error: float

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "std_error": self.std_error}

    def z_score(self, other: "SummaryStats | float") -> float:
        """|difference| in units of the combined standard error."""
        if isinstance(other, SummaryStats):
            se = math.hypot(self.std_error, other.std_error)
            diff = abs(self.mean - other.mean)
        else:
            se = self.std_error
            diff = abs(self.mean - float(other))
        if se == 0.0:
            return 0.0 if diff == 0.0 else math.inf
        return diff / se


def summarize(samples) -> SummaryStats:
    """Mean and standard error (sample sd / sqrt(count)) of ``samples``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("summarize needs at least 2 samples")
    return SummaryStats(int(x.size), float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)))


def sample_geometric_quarter(rng: RandomStream, size=None):
    """L >= 1 with P(L = k) = (3/4)^(k-1) / 4."""
    out = rng.generator.geometric(0.25, size)
    return int(out) if size is None else out.astype(np.int64)


def sample_binomial(n, p, rng: RandomStream, size=None):
    """Binomial(n, p) draw(s).

    numpy's sampler uses inversion when n*min(p, 1-p) is small and BTPE
    accept-reject otherwise, which is the split we want for large factory
    levels.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0.0) | (p_arr > 1.0)):
        raise ValueError("p must lie in [0, 1]")
    if np.any(np.asarray(n) < 0):
        raise ValueError("n must be non-negative")
    out = rng.generator.binomial(n, p, size)
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def sample_hypergeometric(total: int, draws: int, successes: int, rng: RandomStream, size=None):
    """Number of successes in ``draws`` draws without replacement."""
    if not (0 <= draws <= total and 0 <= successes <= total):
        raise ValueError("need 0 <= draws, successes <= total")
    if draws == 0 or successes == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    if successes == total:
        return draws if size is None else np.full(size, draws, dtype=np.int64)
    out = rng.generator.hypergeometric(successes, total - successes, draws, size)
    return int(out) if size is None else out.astype(np.int64)


def hypergeometric_pmf(total: int, draws: int, successes: int) -> np.ndarray:
    """Exact pmf over 0..draws by the combinatorial formula."""
    denom = math.comb(total, draws)
    return np.array(
        [math.comb(successes, j) * math.comb(total - successes, draws - j) / denom for j in range(draws + 1)]
    )


def bernstein_basis(n: int, y):
    """Order-n Bernstein basis ``(C(n,i) y^i (1-y)^(n-i))_i``.

    Built with the degree-raising recurrence ``b_{m,i} = (1-y) b_{m-1,i} +
    y b_{m-1,i-1}``, which only forms convex combinations and never touches
    factorials.  ``y`` may be a scalar (result shape ``(n+1,)``) or an array
    (result shape ``y.shape + (n+1,)``).
    """
    if n < 0:
        raise ValueError("degree must be non-negative")
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr < 0.0) | (y_arr > 1.0)):
        raise ValueError("y must lie in [0, 1]")
    yy = y_arr[..., None]
    b = np.zeros(y_arr.shape + (n + 1,))
    b[..., 0] = 1.0
    for m in range(1, n + 1):
        prev = b[..., :m].copy()
        b[..., :m] = (1.0 - yy) * prev
        b[..., 1 : m + 1] += yy * prev
    return b


def map_chunks(
    fn: Callable[[int, int, RandomStream], T],
    reps: int,
    rng: RandomStream,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> list[T]:
    """Run ``fn(start, size, stream)`` over fixed replicate blocks.

    Block ``b`` always receives ``rng.child(b)``; the block layout depends only
    on ``reps`` and ``chunk_size``, so results are identical for any thread
    count.  Results come back in block order.
    """
    if reps <= 0:
        return []
    starts = list(range(0, reps, chunk_size))
    jobs = [(s, min(chunk_size, reps - s), rng.child(b)) for b, s in enumerate(starts)]
    if threads <= 1 or len(jobs) == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
