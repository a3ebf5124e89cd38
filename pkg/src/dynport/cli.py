"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver cap or
abort.  Settings resolve as command-line flags over ``--config`` file over
profile defaults.
"""

import argparse
import json
import os
import sys

from . import __version__
from .exceptions import ConfigError, DynportError
from .market_data import write_prices
from .metrics import landscape_table
from .pipeline import (
    FORECASTS,
    SOLVERS,
    RunConfig,
    _write_json,
    build_spec,
    coerce_solver_params,
    compare,
    ingest,
    load_config,
    preprocess,
    run,
    solve,
)
from .problem.qubo import build_qubo, write_qubo
from .problem.spec import PROFILES, ProblemSpec
from .solvers.base import SolutionSet


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _config_args(p, solver=True):
    p.add_argument("--config", help="JSON or key=value configuration file")
    p.add_argument("--input", help="price CSV (date column + one column per asset)")
    p.add_argument("--start", help="first date (ISO-8601, inclusive)")
    p.add_argument("--end", help="last date (ISO-8601, inclusive)")
    p.add_argument("--profile", choices=[*PROFILES, "custom"])
    for name in ("N", "N_t", "N_q", "K"):
        p.add_argument(f"--{name}", type=int, dest=name)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--rho", type=float)
    p.add_argument("--forecast", choices=FORECASTS)
    p.add_argument("--cluster", help="'auto', 'none' or a cluster count")
    p.add_argument("--no-filter", action="store_true", help="skip sub-average asset filtering")
    p.add_argument("--hp-smoothing", type=float, dest="hp_smoothing")
    p.add_argument("--dataset", help="label used by 'compare' (defaults to the profile)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if solver:
        _solver_args(p)


def _solver_args(p):
    p.add_argument("--solver", choices=SOLVERS)
    p.add_argument(
        "--param", "-p", type=_kv, action="append", default=[], metavar="KEY=VALUE",
        help="solver parameter, e.g. -p restarts=200 or -p bond_dim=8",
    )


def _resolve(args):
    data = load_config(args.config) if getattr(args, "config", None) else {}
    params = dict(data.pop("solver_params", {}) or {})
    flags = {
        k: getattr(args, k, None)
        for k in ("input", "start", "end", "profile", "N", "N_t", "N_q", "K", "gamma", "lam",
                  "rho", "forecast", "cluster", "hp_smoothing", "dataset", "seed", "out", "solver")
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    if getattr(args, "no_filter", False):
        data["filter"] = False
    params.update(dict(getattr(args, "param", []) or []))
    data["solver_params"] = params
    return RunConfig.from_mapping(data)


def _need_out(config):
    if not config.out:
        raise ConfigError("--out is required")
    os.makedirs(config.out, exist_ok=True)
    return config.out


def cmd_synth(args):
    from .synthetic import synthetic_prices

    panel = synthetic_prices(
        n_groups=args.groups, group_size=args.group_size, n_quiet=args.quiet,
        years=args.years, correlation=args.correlation, seed=args.seed,
    )
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    write_prices(panel, args.out)
    print(f"wrote {len(panel.asset_ids)} assets x {len(panel.dates)} days to {args.out}")


def cmd_ingest(args):
    config = _resolve(args)
    panel = ingest(config)
    out = _need_out(config)
    write_prices(panel, os.path.join(out, "prices.csv"))
    _write_json(os.path.join(out, "ingest.json"), {
        "assets": list(panel.asset_ids),
        "first_date": str(panel.dates[0]),
        "last_date": str(panel.dates[-1]),
        "n_dates": len(panel.dates),
    })
    print(f"{len(panel.asset_ids)} assets, {len(panel.dates)} dates "
          f"({panel.dates[0]} .. {panel.dates[-1]})")


def cmd_preprocess(args):
    config = _resolve(args)
    pre = preprocess(ingest(config), config)
    out = _need_out(config)
    summary = {
        "retained": pre.kept,
        "months": [str(m) for m in pre.units.periods],
        "units": list(pre.units.asset_ids),
        "clusters": None if pre.clustering is None else pre.clustering.k,
    }
    _write_json(os.path.join(out, "preprocess.json"), summary)
    if pre.clustering is not None:
        _write_json(os.path.join(out, "clustering.json"), pre.clustering.to_json())
    print(f"{len(pre.monthly.asset_ids)} assets -> {len(pre.kept)} retained -> "
          f"{len(pre.units.asset_ids)} optimization units over {len(pre.units.periods)} months")


def cmd_build(args):
    config = _resolve(args)
    pre = preprocess(ingest(config), config)
    spec, meta = build_spec(pre, config)
    out = _need_out(config)
    with open(os.path.join(out, "problem.json"), "w", encoding="utf-8") as fh:
        fh.write(spec.dumps() + "\n")
    write_qubo(build_qubo(spec), os.path.join(out, "problem.qubo"))
    _write_json(os.path.join(out, "build.json"), meta)
    print(f"N={spec.N} N_t={spec.N_t} N_q={spec.N_q} K={spec.K} rho={spec.rho:.6g} "
          f"N_tot={spec.n_variables}")


def _load_problem(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return ProblemSpec.from_json(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read problem {path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"invalid problem JSON {path}: {exc}") from None


def cmd_solve(args):
    spec = _load_problem(args.problem)
    params = coerce_solver_params(args.solver, dict(args.param))
    result = solve(spec, args.solver, params, args.seed)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        result.dump(args.out, spec, include_timing=not args.no_timing)
    best = result.best
    print(f"{args.solver}: {len(result)} solutions, best energy "
          f"{best.energy:.10g} ({result.wall_time:.3g} s)" if best else "no solutions")


def cmd_score(args):
    spec = _load_problem(args.problem)
    try:
        solutions = SolutionSet.from_json(args.solution)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read solution {args.solution}: {exc}") from None
    table = landscape_table(solutions, spec)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table.to_csv(percent=not args.fraction))
    sys.stdout.write(table.to_text(percent=not args.fraction))


def cmd_compare(args):
    table = compare(args.runs)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table.to_csv())
    sys.stdout.write(table.to_text())


def cmd_run(args):
    config = _resolve(args)
    manifest = run(config)
    d = manifest["dimensions"]
    best = manifest["best"] or {}
    print(f"{config.solver} on {manifest['dataset']} (N_tot={d['N_tot']}): "
          f"E={best.get('energy')} SR={best.get('sharpe')} P%={best.get('profit_percent')}")
    print(f"artifacts in {config.out}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dynport", description="Dynamic portfolio optimization over discrete holdings."
    )
    parser.add_argument("--version", action="version", version=f"dynport {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic price CSV")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", type=int, default=7)
    p.add_argument("--group-size", type=int, default=4, dest="group_size")
    p.add_argument("--quiet", type=int, default=24,
                   help="low-variance, low-return assets added to the groups")
    p.add_argument("--years", type=float, default=8)
    p.add_argument("--correlation", type=float, default=0.9)
    p.set_defaults(func=cmd_synth)

    for name, func, text in (
        ("ingest", cmd_ingest, "parse and clean a price CSV"),
        ("preprocess", cmd_preprocess, "returns, filtering and clustering"),
        ("build", cmd_build, "write the problem JSON and its QUBO"),
        ("run", cmd_run, "full pipeline: ingest to reports"),
    ):
        p = sub.add_parser(name, help=text)
        _config_args(p, solver=name == "run")
        p.set_defaults(func=func)

    p = sub.add_parser("solve", help="solve a problem JSON")
    p.add_argument("problem")
    _solver_args(p)
    p.set_defaults(solver="annealing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="solution JSON to write")
    p.add_argument("--no-timing", action="store_true", help="write wall_time_s as null")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("score", help="landscape table (T,E,C,R,TC,P,SR) of a solution JSON")
    p.add_argument("problem")
    p.add_argument("solution")
    p.add_argument("--out", help="CSV file to write")
    p.add_argument("--fraction", action="store_true",
                   help="report R, TC, P as fractions instead of percent")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("compare", help="method x dataset grids over run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="CSV file to write")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except DynportError as exc:
        print(f"dynport {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dynport {args.command}: error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
