"""Acceptance suite composed of every numbered criterion.

Each check returns a :class:`CriterionResult`; :func:`run_all` collects them
into a verdict dictionary that contains no timings, so two runs with the same
seed and budget produce identical JSON whatever the thread count.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .allen_cahn import (
    AllenCahnProblem,
    TernaryModelParams,
    cubic_identity_residual,
    estimate_field,
    estimate_ternary_field,
    fd_solve,
    initial_condition,
    interpolate,
    step_profile,
)
from .ancestral_dual import (
    branch_transform,
    dual_side,
    duality_function,
    duality_gap,
    hypergeometric_identity_check,
    interpolated_side,
)
from .core_random import RandomStream, summarize
from .factory import FactoryTable, PolyBoundViolation, check_poly_bound, estimate, sample_many, series_eval
from .registry import registry
from .tables import table_for
from .wright_fisher import (
    DiffusionConfig,
    SelectionModel,
    discrete_generator_apply,
    limit_generator_apply,
    simulate_diffusion_batch,
    simulate_frequency_paths,
)

VERDICT_SCHEMA = 1
Z_MAX = 4.0


@dataclass(frozen=True)
class Budget:
    factory_reps: int = 100_000
    endpoint_reps: int = 10_000
    wf_reps: int = 10_000
    dual_reps: int = 100_000
    ac_reps: int = 100_000
    oracle_cases: int = 100


BUDGETS = {
    "desk": Budget(),
    "smoke": Budget(factory_reps=4_000, endpoint_reps=1_000, wf_reps=1_000, dual_reps=4_000, ac_reps=4_000),
}


@dataclass
class CriterionResult:
    id: str
    title: str
    passed: bool
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id}: {self.title}"


@dataclass
class Context:
    seed: int
    budget: Budget
    threads: int = 1
    cache_dir: object = "default"
    _tables: dict = field(default_factory=dict)

    def rng(self, *key: int) -> RandomStream:
        return RandomStream(self.seed, key)

    def table(self, name: str) -> FactoryTable:
        if name not in self._tables:
            self._tables[name] = table_for(name, cache_dir=self.cache_dir)
        return self._tables[name]


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def _positive_entries():
    return [e for e in registry() if not e.negative]


# ---------------------------------------------------------------------------


def check_registry(ctx: Context) -> CriterionResult:
    rows, ok = {}, True
    for e in registry():
        try:
            cert = check_poly_bound(e.target)
            rows[e.name] = {"exponent": cert.exponent, "expected": e.expected_exponent}
            ok &= e.expected_exponent is not None and cert.exponent == e.expected_exponent
        except PolyBoundViolation as exc:
            rows[e.name] = {"rejected": True, "witness_p": exc.p, "expected_rejection": e.negative}
            ok &= e.negative
    return CriterionResult("R", "registry entries pass the polynomial bound; clamp2p is rejected", ok, rows)


def check_factory_exactness(ctx: Context) -> CriterionResult:
    grid = np.round(np.arange(21) * 0.05, 10)
    per_fn, ok = {}, True
    for fi, e in enumerate(_positive_entries()):
        table = ctx.table(e.name)
        fp = np.asarray(e.target(grid), dtype=float)
        z, excluded = [], 0
        for pi, p in enumerate(grid):
            stats, exc = estimate(table, float(p), ctx.budget.factory_reps, ctx.rng(1, fi, pi), ctx.threads)
            z.append(stats.z_score(float(fp[pi])))
            excluded += exc
        z = np.array(z)
        frac = float(np.mean(z <= Z_MAX))
        series = series_eval(table, grid)
        bound = series.tail_bound + 1e-6
        series_err = float(np.max(np.abs(series.partial - fp)))
        good = frac >= 0.95 and series_err <= bound
        ok &= good
        per_fn[e.name] = {
            "k_max": table.k_max,
            "fraction_within_4se": frac,
            "max_z": float(z.max()),
            "level_cap_exclusions": excluded,
            "series_max_error": series_err,
            "series_bound": bound,
            "passed": good,
        }
    return CriterionResult("1", "factory output mean matches f(p); series tail bound holds", ok, per_fn)


def check_endpoints(ctx: Context) -> CriterionResult:
    table = ctx.table("classical")
    out = {}
    for p, want in ((0.0, 0), (1.0, 1)):
        bits, exc = sample_many(table, p, ctx.budget.endpoint_reps, ctx.rng(2, int(p)))
        out[f"p={p:g}"] = {"distinct_outputs": sorted(set(int(b) for b in np.unique(bits))), "excluded": exc}
    ok = out["p=0"]["distinct_outputs"] == [0] and out["p=1"]["distinct_outputs"] == [1]
    return CriterionResult("2", "classical selection factory is deterministic at p = 0 and p = 1", ok, out)


def _test_functions():
    return {
        "y": (lambda y: y, lambda y: 1.0, lambda y: 0.0),
        "y^2": (lambda y: y**2, lambda y: 2 * y, lambda y: 2.0),
        "y^3": (lambda y: y**3, lambda y: 3 * y**2, lambda y: 6 * y),
        "y(1-y)": (lambda y: y * (1 - y), lambda y: 1 - 2 * y, lambda y: -2.0),
    }


def generator_errors(f, sigma: float, Ns=(50, 100, 200, 400)) -> list[float]:
    ys = np.round(np.arange(1, 10) / 10, 10)
    errs = []
    for N in Ns:
        worst = 0.0
        for h, dh, d2h in _test_functions().values():
            for y in ys:
                disc = N * discrete_generator_apply(N, sigma, f, h, float(y))
                lim = limit_generator_apply(sigma, f, h, float(y), dh, d2h)
                worst = max(worst, abs(disc - lim))
        errs.append(worst)
    return errs


def check_generator(ctx: Context) -> CriterionResult:
    f = next(e.target for e in registry() if e.name == "linear13")
    Ns = (50, 100, 200, 400)
    errs = generator_errors(f, 1.0, Ns)
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(1.5 <= r <= 3.0 for r in ratios)
    return CriterionResult(
        "3", "scaled discrete generator converges at rate 1/N", ok, {"N": list(Ns), "max_error": errs, "ratios": ratios}
    )


def check_cross_simulator(ctx: Context) -> CriterionResult:
    table = ctx.table("linear13")
    N, y0, sigma, ts = 500, 0.2, 1.0, (0.25, 0.5)
    reps = ctx.budget.wf_reps
    times, paths, excluded = simulate_frequency_paths(N, y0, max(ts), SelectionModel(sigma, table), reps, ctx.rng(4, 0), ctx.threads)
    _, diff = simulate_diffusion_batch(
        y0, max(ts), sigma, table.target, DiffusionConfig(dt=1e-3), reps, ctx.rng(4, 1), record_times=ts, threads=ctx.threads
    )
    rows, ok = [], True
    for ti, t in enumerate(ts):
        col = int(round(N * t))
        for order in (1, 2):
            a = summarize(paths[:, col] ** order)
            b = summarize(diff[:, ti] ** order)
            diff_abs = abs(a.mean - b.mean)
            good = diff_abs <= Z_MAX * math.hypot(a.std_error, b.std_error) + 0.01
            ok &= good
            rows.append({"t": t, "moment": order, "particle": a.mean, "diffusion": b.mean, "z": a.z_score(b), "passed": good})
    return CriterionResult("4", "particle system and diffusion agree in first two moments", ok, {"cells": rows, "level_cap_exclusions": excluded})


V0 = np.array([0.0, 0.0, 1.0])


def check_duality_closed_form(ctx: Context) -> CriterionResult:
    y, t = 0.3, 0.5
    exact = y * y * math.exp(-t) + y * (1 - math.exp(-t))
    table = ctx.table("linear13")
    samples, dim_hits, lvl_hits = dual_side(y, V0, 0.0, table, t, ctx.budget.dual_reps, ctx.rng(5, 0), threads=ctx.threads)
    rhs = summarize(samples)
    ok = abs(rhs.mean - exact) <= Z_MAX * rhs.std_error
    return CriterionResult(
        "5a", "neutral dual side matches the Kingman closed form", ok, {"exact": exact, "rhs": rhs.to_dict(), "z": rhs.z_score(exact)}
    )


def check_duality_two_sided(ctx: Context) -> CriterionResult:
    table = ctx.table("linear13")
    cells, ok = [], True
    for i, (y, t) in enumerate(itertools.product((0.25, 0.5, 0.75), (0.25, 0.5))):
        rep = duality_gap(y, V0, 1.0, table, t, ctx.budget.dual_reps, ctx.rng(5, 1, i), dt=1e-3, threads=ctx.threads)
        good = rep.z_score <= Z_MAX and rep.valid
        ok &= good
        cells.append({"y": y, "t": t, **rep.to_dict(), "passed": good})
    return CriterionResult("5b", "forward and dual expectations agree (two independent simulators)", ok, {"cells": cells})


def check_duality_martingale(ctx: Context) -> CriterionResult:
    """Literal check that E[H(y, V_t)] does not depend on t, plus the interpolation form."""
    table = ctx.table("linear13")
    ts = (0.25, 0.5, 1.0)
    rows, ok = [], True
    for yi, y in enumerate((0.25, 0.5, 0.75)):
        stats = []
        for ti, t in enumerate(ts):
            s, _, _ = dual_side(y, V0, 1.0, table, t, ctx.budget.dual_reps, ctx.rng(5, 2, yi, ti), threads=ctx.threads)
            stats.append(summarize(s))
        zs = {f"{ts[a]:g}-{ts[b]:g}": stats[a].z_score(stats[b]) for a, b in itertools.combinations(range(3), 2)}
        good = all(z <= Z_MAX for z in zs.values())
        ok &= good
        rows.append({"y": y, "means": [s.mean for s in stats], "pairwise_z": zs, "passed": good})
    # E[H(Y_{t-s}, V_s)] with independent Y and V is what the duality actually keeps constant
    y, t = 0.5, 1.0
    inter = []
    for si, s in enumerate((0.0, 0.5, 1.0)):
        samples = interpolated_side(y, V0, 1.0, table, t, s, ctx.budget.dual_reps, ctx.rng(5, 3, si), threads=ctx.threads)
        inter.append(summarize(samples))
    izs = [inter[a].z_score(inter[b]) for a, b in itertools.combinations(range(3), 2)]
    return CriterionResult(
        "5c",
        "E[H(y, V_t)] constant across t = 0.25, 0.5, 1.0",
        ok,
        {
            "cells": rows,
            "interpolation_check": {
                "y": y,
                "t": t,
                "s": [0.0, 0.5, 1.0],
                "means": [s.mean for s in inter],
                "pairwise_z": izs,
                "passed": all(z <= Z_MAX for z in izs),
            },
        },
    )


def check_hypergeometric(ctx: Context) -> CriterionResult:
    worst = max(hypergeometric_identity_check(n, eta) for n in range(1, 6) for eta in range(0, 6))
    return CriterionResult("6", "hypergeometric splitting identity holds exactly", worst <= 1e-12, {"max_discrepancy": worst})


def branch_expectation_bruteforce(v: np.ndarray, eta: int, indicator: np.ndarray, y: float) -> float:
    """E over all 2^(n+eta-1) root configurations: eta new parents vote through the
    indicator for the branching lineage, the other n-1 lineages keep their allele."""
    n = v.size - 1
    m = n + eta - 1
    total = 0.0
    for bits in itertools.product((0, 1), repeat=m):
        ones = sum(bits)
        w = y**ones * (1.0 - y) ** (m - ones)
        count = int(indicator[sum(bits[:eta])]) + sum(bits[eta:])
        total += w * v[count]
    return total


def check_branch_oracle(ctx: Context) -> CriterionResult:
    pool = []
    for e in _positive_entries():
        t = ctx.table(e.name)
        if t.degenerate is None:
            pool += [(t, k) for k in range(1, t.k_max + 1) if t.level(k).eta <= 4]
    gen = ctx.rng(7).generator
    worst = 0.0
    for _ in range(ctx.budget.oracle_cases):
        table, k = pool[int(gen.integers(len(pool)))]
        n = int(gen.integers(1, 5))
        v = gen.random(n + 1)
        y = float(gen.random())
        lv = table.level(k)
        fast = duality_function(y, branch_transform(v, k, table))
        slow = branch_expectation_bruteforce(v, lv.eta, lv.indicator_table, y)
        worst = max(worst, abs(fast - slow))
    return CriterionResult(
        "7", "branch transform matches brute-force enumeration", worst <= 1e-10, {"cases": ctx.budget.oracle_cases, "max_error": worst}
    )


GRID9 = np.round(np.arange(1, 10) / 10, 10)
GRID5 = np.array([0.1, 0.3, 0.5, 0.7, 0.9])


def _compare_fields(mc, fd_values, slack: float) -> tuple[bool, list]:
    rows, ok = [], True
    for x, m, se, r in zip(mc.grid, mc.values, mc.std_errors, fd_values):
        good = abs(m - r) <= Z_MAX * se + slack
        ok &= good
        rows.append({"x": x, "mc_mean": m, "mc_se": se, "fd": r, "abs_diff": abs(m - r), "passed": good})
    return ok and mc.valid, rows


def check_allen_cahn(ctx: Context) -> CriterionResult:
    table = ctx.table("linear13")
    prob = AllenCahnProblem(table.target, 1.0, step_profile, 0.25)
    mc = estimate_field(prob, table, GRID9, ctx.budget.ac_reps, ctx.rng(8), threads=ctx.threads)
    fd = interpolate(fd_solve(prob, 256), GRID9)
    ok, rows = _compare_fields(mc, fd, 5e-3)
    return CriterionResult("8", "voting tree and finite differences agree", ok, {"points": rows, "excluded_fraction": mc.excluded_fraction})


def check_ternary(ctx: Context) -> CriterionResult:
    us = np.round(np.arange(101) / 100, 10)
    vals = (0.1, 0.5, 1.0)
    resid = max(cubic_identity_residual(float(u), TernaryModelParams(e, n)) for u in us for e in vals for n in vals)
    params = TernaryModelParams(0.5, 0.5)
    t = 0.1
    mc = estimate_ternary_field(params, step_profile, t, GRID5, ctx.budget.ac_reps, ctx.rng(9), threads=ctx.threads)
    fd = interpolate(fd_solve(params.problem(step_profile, t), 256), GRID5)
    ok, rows = _compare_fields(mc, fd, 5e-3)
    return CriterionResult(
        "9",
        "cubic voting identity and ternary tree vs finite differences",
        ok and resid <= 1e-12,
        {"max_identity_residual": resid, "points": rows, "excluded_fraction": mc.excluded_fraction},
    )


def check_stationarity(ctx: Context) -> CriterionResult:
    table = ctx.table("linear13")
    prob = AllenCahnProblem(table.target, 1.0, initial_condition("half"), 0.5)
    mc = estimate_field(prob, table, GRID9, ctx.budget.ac_reps, ctx.rng(10), threads=ctx.threads)
    fd = fd_solve(prob, 256)
    fd_err = float(np.max(np.abs(fd.values - 0.5)))
    zs = np.abs(mc.values - 0.5) / mc.std_errors
    ok = bool(np.all(zs <= Z_MAX)) and fd_err <= 1e-8 and mc.valid
    return CriterionResult(
        "10", "constant fixed point stays put in both solvers", ok, {"mc_values": mc.values, "max_z": float(zs.max()), "fd_max_error": fd_err}
    )


def check_thread_invariance(ctx: Context) -> CriterionResult:
    """Spot check inside one run; the full check compares two complete verdicts."""
    table = ctx.table("linear13")
    reps = 3 * 4096 + 17
    a = [estimate(table, 0.3, reps, ctx.rng(11, 0), threads)[0] for threads in (1, 8)]
    b = [dual_side(0.5, V0, 1.0, table, 0.5, reps, ctx.rng(11, 1), threads=threads)[0] for threads in (1, 8)]
    same = a[0] == a[1] and np.array_equal(b[0], b[1])
    return CriterionResult("11", "results do not depend on the thread count", bool(same), {"spot_check_reps": reps})


CHECKS: dict[str, Callable[[Context], CriterionResult]] = {
    "R": check_registry,
    "1": check_factory_exactness,
    "2": check_endpoints,
    "3": check_generator,
    "4": check_cross_simulator,
    "5a": check_duality_closed_form,
    "5b": check_duality_two_sided,
    "5c": check_duality_martingale,
    "6": check_hypergeometric,
    "7": check_branch_oracle,
    "8": check_allen_cahn,
    "9": check_ternary,
    "10": check_stationarity,
    "11": check_thread_invariance,
}


def run_all(
    seed: int,
    budget: str = "desk",
    threads: int = 1,
    cache_dir="default",
    only: list[str] | None = None,
    progress: Callable[[CriterionResult], None] | None = None,
) -> dict:
    ctx = Context(seed, BUDGETS[budget], threads, cache_dir)
    unknown = set(only or ()) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown criteria: {sorted(unknown)}")
    results = []
    for cid, check in CHECKS.items():
        if only is not None and cid not in only:
            continue
        res = check(ctx)
        results.append(res)
        if progress:
            progress(res)
    tables = {name: {"digest": t.digest()[:16], "k_max": t.k_max, "warnings": list(t.warnings)} for name, t in sorted(ctx._tables.items())}
    return _clean(
        {
            "schema_version": VERDICT_SCHEMA,
            "tool_version": __version__,
            "seed": seed,
            "budget": {"name": budget, **asdict(BUDGETS[budget])},
            "tables": tables,
            "criteria": [asdict(r) for r in results],
            "passed": all(r.passed for r in results),
        }
    )


def dumps(verdict: dict) -> str:
    return json.dumps(verdict, indent=2, sort_keys=True) + "\n"
