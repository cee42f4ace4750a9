"""Command line entry point.

    kobdual factory build|sample
    kobdual wf particle|diffusion
    kobdual dual gap|identity-check
    kobdual ac mc|fd|compare
    kobdual verify all

Exit status: 0 success, 2 a scientific check failed (or the target function
was rejected), 1 any other error.  ``KOBDUAL_SEED`` overrides ``--seed``.
Any option may also come from ``--config FILE`` holding ``key = value`` lines;
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .allen_cahn import (
    AllenCahnProblem,
    NodeCapExceeded,
    StabilityError,
    TernaryModelParams,
    estimate_field,
    estimate_ternary_field,
    fd_solve,
    initial_condition,
    interpolate,
)
from .ancestral_dual import DimensionCapExceeded, duality_gap, hypergeometric_identity_check
from .core_random import RandomStream, summarize
from .factory import (
    EtaSearchConfig,
    FactoryError,
    FactoryTable,
    PolyBoundViolation,
    build_table,
    check_poly_bound,
    estimate,
    load_table,
    save_table,
)
from .registry import get_entry, registry
from .tables import table_for
from .wright_fisher import DiffusionConfig, SelectionModel, simulate_diffusion_batch, simulate_frequency_paths
from . import verify

MANIFEST_SCHEMA = 1
EXIT_OK, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2

log = logging.getLogger("kobdual")


class CheckFailed(Exception):
    """The command ran but its scientific check did not pass."""


# ---------------------------------------------------------------------------
# output plumbing


class Run:
    """Collects outputs and warnings of one invocation and writes the manifest."""

    def __init__(self, args: argparse.Namespace, argv: list[str]):
        self.args = args
        self.argv = argv
        self.start = time.monotonic()
        self.warnings: list[str] = []
        self.outputs: list[str] = []
        self.tables: dict[str, str] = {}
        manifest = getattr(args, "manifest", None)
        out = getattr(args, "out", None)
        self.manifest_path = Path(manifest) if manifest else (Path(f"{out}.manifest.json") if out else None)

    def warn(self, msg: str) -> None:
        if msg not in self.warnings:
            self.warnings.append(msg)
            print(f"warning: {msg}", file=sys.stderr)

    def use_table(self, name: str, table: FactoryTable) -> None:
        self.tables[name] = table.digest()
        for w in table.warnings:
            self.warn(f"{name}: {w}")

    @property
    def manifest_ref(self) -> str | None:
        return self.manifest_path.name if self.manifest_path else None

    def emit_json(self, obj: dict, path: str | None = None) -> None:
        path = path if path is not None else getattr(self.args, "out", None)
        if path and self.manifest_ref:
            obj = {**obj, "manifest": self.manifest_ref}
        text = json.dumps(verify._clean(obj), indent=2, sort_keys=True) + "\n"
        self._write(text, path)

    def emit_csv(self, header: list[str], rows, path: str | None = None) -> None:
        path = path if path is not None else getattr(self.args, "out", None)
        buf = io.StringIO()
        if path and self.manifest_ref:
            buf.write(f"# manifest: {self.manifest_ref}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        self._write(buf.getvalue(), path)

    def _write(self, text: str, path: str | None) -> None:
        if path:
            Path(path).write_text(text)
            self.outputs.append(str(path))
        else:
            sys.stdout.write(text)

    def write_manifest(self, status: str) -> None:
        if self.manifest_path is None:
            return
        config = {k: v for k, v in vars(self.args).items() if not k.startswith("_") and k != "func"}
        manifest = {
            "manifest_schema": MANIFEST_SCHEMA,
            "tool": "kobdual",
            "tool_version": __version__,
            "command": f"{self.args.group} {self.args.command}",
            "argv": self.argv,
            "config": config,
            "seed": getattr(self.args, "seed", None),
            "factory_tables": self.tables,
            "warnings": self.warnings,
            "outputs": self.outputs,
            "status": status,
            "wall_clock_seconds": round(time.monotonic() - self.start, 3),
        }
        self.manifest_path.write_text(json.dumps(verify._clean(manifest), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _resolve_table(run: Run, args) -> FactoryTable:
    if getattr(args, "table", None):
        table = load_table(args.table)
        run.use_table(table.target.name, table)
        return table
    if not getattr(args, "function", None):
        raise ValueError("give --function or --table")
    table = table_for(args.function, cache_dir=args.cache_dir if args.cache_dir is not None else "default")
    run.use_table(args.function, table)
    return table


# ---------------------------------------------------------------------------
# factory


def cmd_factory_build(run: Run, args) -> int:
    entry = get_entry(args.function)
    cert = check_poly_bound(entry.target, grid_points=args.grid)
    cfg = EtaSearchConfig(
        grid_points=args.grid,
        eta_max=args.eta_max,
        levels=args.levels if args.levels is not None else entry.levels,
        mode=args.mode if args.mode is not None else entry.mode,
    )
    table = build_table(entry.target, cert, cfg)
    out = args.out or "table.kob"
    save_table(table, out)
    run.outputs.append(out)
    run.use_table(args.function, table)
    summary = {
        "function": entry.name,
        "poly_bound_exponent": cert.exponent,
        "k_max": table.k_max,
        "mode": cfg.mode,
        "etas": table.etas,
        "certification": [lv.certification for lv in table.levels],
        "digest": table.digest(),
        "table": out,
    }
    run.emit_json(summary, path=args.summary or "")
    return EXIT_OK


def cmd_factory_sample(run: Run, args) -> int:
    table = _resolve_table(run, args)
    stats, excluded = estimate(table, args.p, args.reps, RandomStream(args.seed), args.threads)
    if excluded:
        run.warn(f"{excluded} draws exceeded the table depth {table.k_max} and were excluded")
    fp = float(table.target(args.p))
    run.emit_json({**stats.to_dict(), "p": args.p, "f_p": fp, "z_score": stats.z_score(fp), "level_cap_exclusions": excluded})
    return EXIT_OK


# ---------------------------------------------------------------------------
# wright-fisher


def _dump_paths(path: str, times, values) -> None:
    with open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "time", "value"])
        for r in range(values.shape[0]):
            for t, v in zip(times, values[r]):
                w.writerow([r, repr(float(t)), repr(float(v))])


def _column_stats(values: np.ndarray):
    n = values.shape[0]
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(values.shape[1], math.nan)
    return mean, se


def cmd_wf_particle(run: Run, args) -> int:
    table = _resolve_table(run, args)
    times, values, excluded = simulate_frequency_paths(
        args.N, args.y0, args.t, SelectionModel(args.sigma, table), args.reps, RandomStream(args.seed), args.threads
    )
    if excluded:
        run.warn(f"{excluded} of {args.reps} replicates hit the factory level cap and were excluded")
    mean, se = _column_stats(values)
    run.emit_csv(["time", "mean", "std_error"], zip(times, mean, se))
    if args.dump_paths:
        _dump_paths(args.dump_paths, times, values)
        run.outputs.append(args.dump_paths)
    return EXIT_OK


def cmd_wf_diffusion(run: Run, args) -> int:
    f = get_entry(args.function).target
    record = np.linspace(0.0, args.t, args.points)
    times, values = simulate_diffusion_batch(
        args.y0, args.t, args.sigma, f, DiffusionConfig(dt=args.dt), args.reps, RandomStream(args.seed), record, args.threads
    )
    mean, se = _column_stats(values)
    run.emit_csv(["time", "mean", "std_error"], zip(times, mean, se))
    if args.dump_paths:
        _dump_paths(args.dump_paths, times, values)
        run.outputs.append(args.dump_paths)
    return EXIT_OK


# ---------------------------------------------------------------------------
# dual


def cmd_dual_gap(run: Run, args) -> int:
    v0 = np.array([float(x) for x in args.v.split(",")])
    if args.n is not None and args.n != v0.size - 1:
        raise ValueError(f"--n {args.n} does not match the {v0.size} coefficients of --v")
    table = _resolve_table(run, args)
    rep = duality_gap(args.y, v0, args.sigma, table, args.t, args.reps, RandomStream(args.seed), dt=args.dt, dim_cap=args.dim_cap, threads=args.threads)
    if rep.dimension_cap_hits or rep.level_cap_hits:
        run.warn(f"{rep.dimension_cap_hits} dimension-cap and {rep.level_cap_hits} level-cap exclusions on the dual side")
    passed = rep.z_score <= verify.Z_MAX and rep.valid
    run.emit_json({**rep.to_dict(), "y": args.y, "t": args.t, "sigma": args.sigma, "v0": v0, "passed": passed})
    if not passed:
        raise CheckFailed(f"duality gap z = {rep.z_score:.3f} (valid={rep.valid})")
    return EXIT_OK


def cmd_dual_identity(run: Run, args) -> int:
    worst = max(
        hypergeometric_identity_check(n, eta) for n in range(1, args.nmax + 1) for eta in range(0, args.etamax + 1)
    )
    passed = worst <= args.tol
    run.emit_json({"nmax": args.nmax, "etamax": args.etamax, "max_discrepancy": worst, "tolerance": args.tol, "passed": passed})
    if not passed:
        raise CheckFailed(f"max discrepancy {worst:.3g} exceeds {args.tol:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# allen-cahn


def _ac_grid(args) -> np.ndarray:
    return np.arange(1, args.grid + 1) / (args.grid + 1)


def _ac_problem(run: Run, args):
    u0 = initial_condition(args.u0)
    if args.ternary:
        params = TernaryModelParams(args.eps, args.nu)
        if args.lambda_ is not None and not math.isclose(args.lambda_, params.rate):
            run.warn(f"--lambda ignored: the ternary model branches at rate {params.rate:g}")
        return params.problem(u0, args.t), None, params
    if not args.function:
        raise ValueError("give --function or --ternary")
    lam = 1.0 if args.lambda_ is None else args.lambda_
    f = get_entry(args.function).target
    return AllenCahnProblem(f, lam, u0, args.t), args.function, None


def _ac_mc(run: Run, args, problem, name, params):
    grid = _ac_grid(args)
    rng = RandomStream(args.seed)
    if params is not None:
        snap = estimate_ternary_field(params, problem.initial_condition, problem.horizon, grid, args.reps, rng, args.node_cap, args.threads)
    else:
        table = table_for(name, cache_dir=args.cache_dir if args.cache_dir is not None else "default")
        run.use_table(name, table)
        snap = estimate_field(problem, table, grid, args.reps, rng, args.node_cap, args.threads)
    if snap.excluded_fraction > 0:
        run.warn(f"node/level cap excluded {snap.excluded_fraction:.2e} of the trees")
    if not snap.valid:
        raise CheckFailed(f"excluded fraction {snap.excluded_fraction:.2e} exceeds {snap.max_excluded_fraction:g}")
    return snap


def _ac_fd(args, problem):
    dt = None if args.dt == "auto" else float(args.dt)
    return fd_solve(problem, args.gridn, dt)


def cmd_ac_mc(run: Run, args) -> int:
    problem, name, params = _ac_problem(run, args)
    snap = _ac_mc(run, args, problem, name, params)
    run.emit_csv(["x", "mean", "std_error"], zip(snap.grid, snap.values, snap.std_errors))
    return EXIT_OK


def cmd_ac_fd(run: Run, args) -> int:
    problem, _, _ = _ac_problem(run, args)
    snap = _ac_fd(args, problem)
    if args.nodes:
        run.emit_csv(["x", "value"], zip(snap.grid, snap.values))
    else:
        grid = _ac_grid(args)
        run.emit_csv(["x", "value"], zip(grid, interpolate(snap, grid)))
    return EXIT_OK


def cmd_ac_compare(run: Run, args) -> int:
    problem, name, params = _ac_problem(run, args)
    mc = _ac_mc(run, args, problem, name, params)
    fd = interpolate(_ac_fd(args, problem), mc.grid)
    diff = np.abs(mc.values - fd)
    ok = diff <= verify.Z_MAX * mc.std_errors + args.slack
    run.emit_csv(
        ["x", "mc_mean", "mc_se", "fd_value", "abs_diff", "pass"],
        [(x, m, s, r, d, bool(p)) for x, m, s, r, d, p in zip(mc.grid, mc.values, mc.std_errors, fd, diff, ok)],
    )
    verdict = {
        "passed": bool(ok.all()),
        "max_abs_diff": float(diff.max()),
        "slack": args.slack,
        "z_max": verify.Z_MAX,
        "excluded_fraction": mc.excluded_fraction,
        "failing_points": mc.grid[~ok],
    }
    run.emit_json(verdict, path=args.verdict or "")
    if not ok.all():
        raise CheckFailed(f"{int((~ok).sum())} grid points outside 4 stderr + {args.slack:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def cmd_verify_all(run: Run, args) -> int:
    only = args.only.split(",") if args.only else None
    cache = args.cache_dir if args.cache_dir is not None else "default"
    verdict = verify.run_all(
        args.seed, args.budget, args.threads, cache, only, progress=lambda r: print(r.line(), file=sys.stderr, flush=True)
    )
    for name, info in verdict["tables"].items():
        for w in info["warnings"]:
            run.warn(f"{name}: {w}")
    run.emit_json(verdict)
    if not verdict["passed"]:
        failed = [c["id"] for c in verdict["criteria"] if not c["passed"]]
        raise CheckFailed(f"criteria failed: {', '.join(failed)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, seed=True, out=True, threads=True) -> None:
    p.add_argument("--config", help="file of key = value lines supplying option values")
    if seed:
        p.add_argument("--seed", type=int, default=1, help="master seed (overridden by $KOBDUAL_SEED)")
    if threads:
        p.add_argument("--threads", type=int, default=1)
    if out:
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--manifest", help="manifest path (default <out>.manifest.json)")
    p.add_argument("--cache-dir", help="factory table cache directory ('' disables)")


def _table_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--function", help="registered function: " + ", ".join(e.name for e in registry()))
    p.add_argument("--table", help="serialized factory table")


def _ac_options(p: argparse.ArgumentParser, mc=True, fd=True) -> None:
    p.add_argument("--function")
    p.add_argument("--ternary", action="store_true", help="ternary majority-vote model")
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--lambda", dest="lambda_", type=float, help="branching rate (default 1)")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--u0", default="step", help="step, half, cos, const:<c> or a CSV of x,u")
    p.add_argument("--grid", type=int, default=9, help="interior points i/(grid+1)")
    if mc:
        p.add_argument("--reps", type=int, default=100_000)
        p.add_argument("--node-cap", type=int, default=1_000_000)
    if fd:
        p.add_argument("--gridn", type=int, default=256)
        p.add_argument("--dt", default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kobdual", description="Bernoulli-factory selection, ancestral duals and Allen-Cahn voting trees."
    )
    parser.add_argument("--version", action="version", version=f"kobdual {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    groups = parser.add_subparsers(dest="group", required=True)

    leaves = {}

    def leaf(group, name, func, **kw):
        p = group[1].add_parser(name, **kw)
        p.set_defaults(func=func)
        leaves[(group[0], name)] = p
        return p

    g = ("factory", groups.add_parser("factory", help="build and sample Bernoulli factories").add_subparsers(dest="command", required=True))
    p = leaf(g, "build", cmd_factory_build, help="build a factory table")
    p.add_argument("--function", required=True)
    p.add_argument("--levels", type=int)
    p.add_argument("--grid", type=int, default=4097)
    p.add_argument("--mode", choices=("certified", "heuristic"))
    p.add_argument("--eta-max", type=int, default=1 << 17)
    p.add_argument("--summary", help="write the build summary JSON here (default stdout)")
    _common(p, seed=False, threads=False)
    p = leaf(g, "sample", cmd_factory_sample, help="estimate f(p) from factory draws")
    _table_source(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--reps", type=int, default=100_000)
    _common(p)

    g = ("wf", groups.add_parser("wf", help="Wright-Fisher particle system and diffusion").add_subparsers(dest="command", required=True))
    p = leaf(g, "particle", cmd_wf_particle)
    _table_source(p)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--dump-paths")
    _common(p)
    p = leaf(g, "diffusion", cmd_wf_diffusion)
    p.add_argument("--function", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--points", type=int, default=11, help="recorded times, evenly spaced over [0, t]")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--dump-paths")
    _common(p)

    g = ("dual", groups.add_parser("dual", help="ancestral dual and duality checks").add_subparsers(dest="command", required=True))
    p = leaf(g, "gap", cmd_dual_gap)
    _table_source(p)
    p.add_argument("--n", type=int)
    p.add_argument("--v", default="0,0,1", help="initial Bernstein coefficients")
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--reps", type=int, default=100_000)
    p.add_argument("--dim-cap", type=int, default=512)
    _common(p)
    p = leaf(g, "identity-check", cmd_dual_identity)
    p.add_argument("--nmax", type=int, default=5)
    p.add_argument("--etamax", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-12)
    _common(p, seed=False, threads=False)

    g = ("ac", groups.add_parser("ac", help="Allen-Cahn solvers").add_subparsers(dest="command", required=True))
    p = leaf(g, "mc", cmd_ac_mc)
    _ac_options(p, fd=False)
    _common(p)
    p = leaf(g, "fd", cmd_ac_fd)
    _ac_options(p, mc=False)
    p.add_argument("--nodes", action="store_true", help="print every finite-difference node")
    _common(p, seed=False, threads=False)
    p = leaf(g, "compare", cmd_ac_compare)
    _ac_options(p)
    p.add_argument("--slack", type=float, default=5e-3, help="allowance added to 4 stderr")
    p.add_argument("--verdict", help="verdict JSON path (default stdout)")
    _common(p)

    g = ("verify", groups.add_parser("verify", help="acceptance suite").add_subparsers(dest="command", required=True))
    p = leaf(g, "all", cmd_verify_all)
    p.add_argument("--budget", choices=sorted(verify.BUDGETS), default="desk")
    p.add_argument("--only", help="comma separated criterion ids")
    _common(p)
    parser.leaves = leaves
    return parser


def read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _leaf_for(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.ArgumentParser | None:
    words, skip = [], False
    for tok in argv:
        if skip:
            skip = False
        elif tok == "--log-level":
            skip = True
        elif not tok.startswith("-"):
            words.append(tok)
        if len(words) == 2:
            break
    return parser.leaves.get(tuple(words))


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install ``--config`` values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    path = pre.parse_known_args(argv)[0].config
    if not path:
        return
    sub = _leaf_for(parser, argv)
    if sub is None:
        raise ValueError("--config needs a subcommand")
    values = read_config(path)
    if "lambda" in values:
        values["lambda_"] = values.pop("lambda")
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise ValueError(f"{path}: unknown option {key!r} for '{sub.prog}'")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            val = action.type(raw) if action.type else raw
            if action.choices is not None and val not in action.choices:
                raise ValueError(f"{path}: {key} must be one of {sorted(action.choices)}")
            defaults[key] = val
        action.required = False
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means "ran, check failed"
        return EXIT_ERROR if exc.code else 0
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        if hasattr(args, "seed") and os.environ.get("KOBDUAL_SEED"):
            args.seed = int(os.environ["KOBDUAL_SEED"])
        run = Run(args, argv)
        code = args.func(run, args)
        run.write_manifest("ok")
        return code
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        if run:
            run.write_manifest("check-failed")
        return EXIT_CHECK_FAILED
    except PolyBoundViolation as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        if run:
            run.write_manifest("rejected")
        return EXIT_CHECK_FAILED
    except (FactoryError, NodeCapExceeded, DimensionCapExceeded, StabilityError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.write_manifest("error")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
