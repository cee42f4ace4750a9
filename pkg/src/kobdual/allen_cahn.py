"""Allen-Cahn type equations on [0, 1] with Neumann boundary.

    du/dt = u'' + lambda (f(u) - u),    u(., 0) = u0

Two solvers: a voting branching Brownian motion (the root allele of a random
tree is A with probability u(x, t)) and an explicit finite-difference scheme
used as the deterministic reference.

Particles move as Brownian motion with generator d^2/dx^2, so a lifetime tau
adds a N(0, 2 tau) displacement; reflection at both ends is realized exactly
by folding the free position into [0, 1].  Positions are only needed at
branch and leaf times, so no time stepping of the motion is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core_random import RandomStream, map_chunks
from .factory import FactoryTable, TargetFunction
from .registry import cubic_voting, tie_probability

DEFAULT_NODE_CAP = 1_000_000


class NodeCapExceeded(Exception):
    def __init__(self, cap: int):
        self.cap = cap
        super().__init__(f"tree exceeded {cap} nodes")


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class AllenCahnProblem:
    forcing: TargetFunction
    rate: float
    initial_condition: Callable
    horizon: float

    def __post_init__(self):
        if not self.rate >= 0:
            raise ValueError("rate must be non-negative")
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")
        u = np.asarray(self.initial_condition(np.linspace(0.0, 1.0, 1025)), dtype=float)
        if np.any(u < 0.0) or np.any(u > 1.0):
            raise ValueError("initial condition must take values in [0, 1]")


@dataclass(frozen=True)
class TernaryModelParams:
    epsilon: float
    nu: float

    def __post_init__(self):
        if not (self.epsilon > 0 and self.nu > 0):
            raise ValueError("epsilon and nu must be positive")

    @property
    def rate(self) -> float:
        return (1.0 + self.epsilon * self.nu) / self.epsilon**2

    @property
    def tie_probability(self) -> float:
        return tie_probability(self.epsilon, self.nu)

    def forcing(self) -> TargetFunction:
        return cubic_voting(self.epsilon, self.nu)

    def problem(self, u0: Callable, horizon: float) -> AllenCahnProblem:
        """The equivalent general problem with the cubic Bernstein forcing."""
        return AllenCahnProblem(self.forcing(), self.rate, u0, horizon)


@dataclass(frozen=True)
class ParticleTree:
    """Nodes in breadth-first order; node 0 is the root.

    ``level`` is 0 for leaves.  ``position`` is where the particle sits when it
    branches or, for leaves, at the horizon.
    """

    position: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    level: np.ndarray
    parent: np.ndarray
    horizon: float

    @property
    def size(self) -> int:
        return int(self.position.size)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.level == 0

    def children(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.parent == i)


@dataclass(frozen=True)
class FieldSnapshot:
    grid: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray | None = None
    excluded_fraction: float = 0.0
    metadata: dict = field(default_factory=dict)
    max_excluded_fraction: float = 1e-3

    @property
    def valid(self) -> bool:
        return self.excluded_fraction <= self.max_excluded_fraction


def reflect_fold(x):
    """Tent-map fold of the real line onto [0, 1] (period 2)."""
    s = np.mod(np.asarray(x, dtype=float), 2.0)
    out = np.where(s <= 1.0, s, 2.0 - s)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# branching rules: offspring law plus the chance a node votes A given j A-children


class _FactoryRule:
    def __init__(self, table: FactoryTable):
        self.table = table

    def offspring(self, size: int, rng: RandomStream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(levels, child counts, over-cap mask)."""
        t = self.table
        if t.degenerate is not None:
            return np.ones(size, dtype=np.int64), np.zeros(size, dtype=np.int64), np.zeros(size, dtype=bool)
        levels = rng.generator.geometric(0.25, size)
        over = levels > t.k_max
        levels = np.where(over, 1, levels)
        return levels, t.etas[levels - 1], over

    def vote(self, levels: np.ndarray, ones: np.ndarray, rng: RandomStream) -> np.ndarray:
        if self.table.degenerate is not None:
            return np.full(levels.size, bool(self.table.degenerate))
        return self.table.decision_probability(levels, ones).astype(bool)


class _TernaryRule:
    def __init__(self, q: float):
        self.prob = np.array([0.0, q, 1.0, 1.0])

    def offspring(self, size: int, rng: RandomStream):
        return np.ones(size, dtype=np.int64), np.full(size, 3, dtype=np.int64), np.zeros(size, dtype=bool)

    def vote(self, levels, ones, rng: RandomStream) -> np.ndarray:
        return rng.random(ones.size) < self.prob[ones]


@dataclass
class _Generation:
    tree: np.ndarray
    parent: np.ndarray
    position: np.ndarray
    birth: np.ndarray
    death: np.ndarray
    level: np.ndarray  # 0 for leaves


def _grow(x0: np.ndarray, horizon: float, rate: float, rule, rng: RandomStream, node_cap: int):
    """Grow one tree per start position, generation by generation.

    Returns the generations and a mask of trees dropped for hitting the node
    cap or the factory level cap.
    """
    T = x0.size
    tree = np.arange(T)
    parent = np.full(T, -1)
    pos = np.asarray(x0, dtype=float)
    birth = np.zeros(T)
    nodes = np.ones(T, dtype=np.int64)
    dropped = np.zeros(T, dtype=bool)
    gens: list[_Generation] = []
    gen = rng.generator
    while tree.size:
        if rate > 0:
            death = birth + gen.exponential(1.0 / rate, tree.size)
        else:
            death = np.full(tree.size, np.inf)
        leaf = death >= horizon
        death = np.where(leaf, horizon, death)
        pos_end = reflect_fold(pos + np.sqrt(2.0 * (death - birth)) * gen.standard_normal(tree.size))
        level = np.zeros(tree.size, dtype=np.int64)
        counts = np.zeros(tree.size, dtype=np.int64)
        inner = np.flatnonzero(~leaf)
        if inner.size:
            lv, cnt, over = rule.offspring(inner.size, rng)
            level[inner] = lv
            counts[inner] = cnt
            dropped[tree[inner[over]]] = True
        gens.append(_Generation(tree, parent, pos_end, birth, death, level))
        nodes += np.bincount(tree, weights=counts, minlength=T).astype(np.int64)
        dropped |= nodes > node_cap
        counts[dropped[tree]] = 0
        src = np.repeat(np.arange(tree.size), counts)
        tree, parent, pos, birth = tree[src], src, pos_end[src], death[src]
    return gens, dropped


def _vote(gens: list[_Generation], rule, u0: Callable, rng: RandomStream) -> np.ndarray:
    """Root alleles (bool per tree), resolving generations from the leaves up."""
    below = None  # (parent index, allele) of the next generation
    for g in reversed(gens):
        n = g.tree.size
        ones = np.zeros(n, dtype=np.int64)
        if below is not None and below[0].size:
            ones = np.bincount(below[0], weights=below[1], minlength=n).astype(np.int64)
        allele = np.zeros(n, dtype=bool)
        leaf = g.level == 0
        if leaf.any():
            u = np.clip(np.asarray(u0(g.position[leaf]), dtype=float), 0.0, 1.0)
            allele[leaf] = rng.random(int(leaf.sum())) < u
        inner = ~leaf
        if inner.any():
            allele[inner] = rule.vote(g.level[inner], ones[inner], rng)
        below = (g.parent, allele)
    return below[1]


def _forest(x0, horizon, rate, rule, u0, rng: RandomStream, node_cap: int):
    gens, dropped = _grow(np.asarray(x0, dtype=float), horizon, rate, rule, rng.child(0), node_cap)
    return _vote(gens, rule, u0, rng.child(1)), dropped


def simulate_tree(
    x: float, problem: AllenCahnProblem, table: FactoryTable, rng: RandomStream, node_cap: int = DEFAULT_NODE_CAP
) -> ParticleTree:
    """One voting tree rooted at ``x``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    gens, dropped = _grow(np.array([float(x)]), problem.horizon, problem.rate, _FactoryRule(table), rng, node_cap)
    if dropped[0]:
        raise NodeCapExceeded(node_cap)
    # parent indices are local to the previous generation; shift them to global ids
    starts = np.cumsum([0] + [g.tree.size for g in gens])
    parent = np.concatenate([np.full(1, -1)] + [g.parent + starts[i - 1] for i, g in enumerate(gens) if i > 0])
    return ParticleTree(
        position=np.concatenate([g.position for g in gens]),
        birth=np.concatenate([g.birth for g in gens]),
        death=np.concatenate([g.death for g in gens]),
        level=np.concatenate([g.level for g in gens]),
        parent=parent,
        horizon=problem.horizon,
    )


def vote_root(tree: ParticleTree, table: FactoryTable, u0: Callable, rng: RandomStream) -> int:
    """Leaves draw A with probability u0(position); internal nodes apply the level indicator."""
    rule = _FactoryRule(table)
    allele = np.zeros(tree.size, dtype=bool)
    for i in range(tree.size - 1, -1, -1):  # children always follow their parent
        if tree.level[i] == 0:
            allele[i] = rng.random() < float(np.clip(u0(tree.position[i]), 0.0, 1.0))
        else:
            ones = int(allele[tree.children(i)].sum())
            allele[i] = bool(rule.vote(np.array([tree.level[i]]), np.array([ones]), rng)[0])
    return int(allele[0])


def simulate_ternary(
    x: float, t: float, params: TernaryModelParams, u0: Callable, rng: RandomStream, node_cap: int = DEFAULT_NODE_CAP
) -> int:
    """Root allele of one ternary majority-vote tree."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    root, dropped = _forest(np.array([float(x)]), t, params.rate, _TernaryRule(params.tie_probability), u0, rng, node_cap)
    if dropped[0]:
        raise NodeCapExceeded(node_cap)
    return int(root[0])


def _estimate(grid, reps, horizon, rate, rule, u0, rng, node_cap, threads) -> FieldSnapshot:
    grid = np.asarray(grid, dtype=float)
    if reps < 2:
        raise ValueError("need at least 2 replicates per grid point")
    if np.any((grid < 0.0) | (grid > 1.0)):
        raise ValueError("grid points must lie in [0, 1]")
    means, ses, dropped_total = np.empty(grid.size), np.empty(grid.size), 0
    for gi, x in enumerate(grid):
        def block(_s, size, stream):
            roots, dropped = _forest(np.full(size, x), horizon, rate, rule, u0, stream, node_cap)
            keep = ~dropped
            return int(roots[keep].sum()), int(keep.sum()), int(dropped.sum())

        parts = map_chunks(block, reps, rng.child(gi), threads)
        ones = sum(p[0] for p in parts)
        kept = sum(p[1] for p in parts)
        dropped_total += sum(p[2] for p in parts)
        m = ones / kept if kept else math.nan
        means[gi] = m
        # sample standard error of a 0/1 mean
        ses[gi] = math.sqrt(m * (1.0 - m) / (kept - 1)) if kept > 1 else math.nan
    return FieldSnapshot(grid, means, ses, dropped_total / (reps * grid.size), {"reps": reps, "node_cap": node_cap})


def estimate_field(
    problem: AllenCahnProblem,
    table: FactoryTable,
    grid,
    reps: int,
    rng: RandomStream,
    node_cap: int = DEFAULT_NODE_CAP,
    threads: int = 1,
) -> FieldSnapshot:
    """Monte Carlo estimate of u(x, t) = P(root allele is A) at each grid point."""
    return _estimate(
        grid, reps, problem.horizon, problem.rate, _FactoryRule(table), problem.initial_condition, rng, node_cap, threads
    )


def estimate_ternary_field(
    params: TernaryModelParams,
    u0: Callable,
    t: float,
    grid,
    reps: int,
    rng: RandomStream,
    node_cap: int = DEFAULT_NODE_CAP,
    threads: int = 1,
) -> FieldSnapshot:
    return _estimate(grid, reps, t, params.rate, _TernaryRule(params.tie_probability), u0, rng, node_cap, threads)


def cubic_identity_residual(u: float, params: TernaryModelParams) -> float:
    """|u(1-u)(2u-1+nu eps)/eps^2 - rate (cubic(u) - u)| for the ternary voting law."""
    e, nu = params.epsilon, params.nu
    lhs = u * (1.0 - u) * (2.0 * u - 1.0 + nu * e) / e**2
    rhs = params.rate * (float(params.forcing()(u)) - u)
    return abs(lhs - rhs)


def cell_average(u0: Callable, x: np.ndarray, h: float, sub: int = 32) -> np.ndarray:
    """Mean of u0 over [x_i - h/2, x_i + h/2], folded at the ends.

    Sampling a discontinuous u0 at the nodes shifts its jump by up to h/2 and
    biases the solution by O(h); cell averages keep the discrete mass exact.
    """
    offs = ((np.arange(sub) + 0.5) / sub - 0.5) * h
    pts = reflect_fold(x[:, None] + offs[None, :])
    return np.asarray(u0(pts), dtype=float).reshape(pts.shape).mean(axis=1)


def fd_solve(problem: AllenCahnProblem, grid_n: int = 256, dt: float | None = None, tol: float = 1e-8) -> FieldSnapshot:
    """Explicit finite differences on the nodes i/grid_n with mirrored ghost points.

    Nodes start from cell averages of u0.  ``dt`` defaults to the largest
    step <= 0.4 h^2 that divides the horizon evenly.  Returns the nodal solution at the horizon; use
    :func:`interpolate` to read it off at other points.
    """
    h = 1.0 / grid_n
    limit = 0.4 * h * h
    T = problem.horizon
    if dt is None:
        steps = max(1, math.ceil(T / limit - 1e-9)) if T > 0 else 0
    else:
        if dt > limit * (1 + 1e-12):
            raise StabilityError(f"dt={dt:g} exceeds the explicit limit 0.4 h^2 = {limit:g}")
        steps = max(1, math.ceil(T / dt - 1e-9)) if T > 0 else 0
    k = T / steps if steps else 0.0
    x = np.linspace(0.0, 1.0, grid_n + 1)
    u = cell_average(problem.initial_condition, x, h)
    f, lam, r = problem.forcing, problem.rate, k / (h * h)
    lap = np.empty_like(u)
    for _ in range(steps):
        lap[1:-1] = u[:-2] - 2.0 * u[1:-1] + u[2:]
        lap[0] = 2.0 * (u[1] - u[0])
        lap[-1] = 2.0 * (u[-2] - u[-1])
        u = u + r * lap + k * lam * (f(u) - u)
    if np.any(u < -tol) or np.any(u > 1.0 + tol):
        raise StabilityError("finite-difference solution left [0, 1]")
    return FieldSnapshot(x, u, None, 0.0, {"h": h, "dt": k, "steps": steps})


def interpolate(snapshot: FieldSnapshot, points) -> np.ndarray:
    return np.interp(np.asarray(points, dtype=float), snapshot.grid, snapshot.values)


# ---------------------------------------------------------------------------
# initial conditions


def step_profile(x):
    """0.1 on [0, 1/2], 0.9 beyond."""
    return 0.1 + 0.8 * (np.asarray(x, dtype=float) > 0.5)


def initial_condition(spec: str) -> Callable:
    """``step``, ``half``, ``cos`` ((1 + cos pi x) / 2), ``const:<c>`` or a CSV file of x,u pairs."""
    if spec == "step":
        return step_profile
    if spec == "half":
        return lambda x: np.full_like(np.asarray(x, dtype=float), 0.5)
    if spec == "cos":
        return lambda x: 0.5 * (1.0 + np.cos(np.pi * np.asarray(x, dtype=float)))
    if spec.startswith("const:"):
        c = float(spec.split(":", 1)[1])
        if not 0.0 <= c <= 1.0:
            raise ValueError("constant initial value must lie in [0, 1]")
        return lambda x: np.full_like(np.asarray(x, dtype=float), c)
    data = np.loadtxt(spec, delimiter=",", ndmin=2)
    xs, us = data[:, 0], data[:, 1]
    order = np.argsort(xs)
    return lambda x: np.interp(np.asarray(x, dtype=float), xs[order], us[order])
