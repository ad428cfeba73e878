"""Command-line front end.

Exit codes: 0 success, 2 bad input (config, table or arguments),
3 estimate finished without meeting the bias target (files still written).
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
from pathlib import Path

from . import driver, figures, mimc, planner
from .config import load_config, run_config
from .errors import ConfigError, OptimizerError
from .level_stats import load_moments, moments_to_table

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 2, 3
ENV_OUT = "WMLMC_OUTPUT_DIR"
DEFAULT_OUT = "wmlmc-out"

log = logging.getLogger("wmlmc")


def fmt(x):
    """12 significant digits, stable across platforms."""
    if isinstance(x, bool) or x is None:
        return "" if x is None else str(x).lower()
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".12g")
    return str(x)


def _round(obj):
    if isinstance(obj, float):
        return float(format(obj, ".12g")) if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(_round(obj), indent=2, sort_keys=True) + "\n", newline="\n")


def write_csv(path: Path, rows, columns=None):
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    path.write_text(buf.getvalue(), newline="\n")


def out_dir(args, doc=None) -> Path:
    p = args.out or (doc or {}).get("output", {}).get("path") or os.environ.get(ENV_OUT) or DEFAULT_OUT
    path = Path(p)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _err(msg):
    print(f"wmlmc: {msg}", file=sys.stderr)


LEVEL_COLUMNS = ["level", "n_samples", "theta", "big_theta", "delta", "eta", "cost"]


def cmd_estimate(args) -> int:
    try:
        doc = load_config(args.config)
        cfg = run_config(doc, seed=args.seed, threads=args.threads, method=args.method)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_INPUT
    res = driver.run(cfg)
    dest = out_dir(args, doc)
    fmt_ = doc.get("output", {}).get("format", "both")
    if fmt_ in ("json", "both"):
        write_json(dest / "result.json", res.to_dict())
    if fmt_ in ("csv", "both"):
        rows = [{"level": l, "n_samples": n, "theta": th, "big_theta": bt, "delta": d,
                 "eta": e, "cost": c}
                for l, (n, th, bt, d, e, c) in enumerate(zip(
                    res.n_samples, res.theta, res.big_theta, res.delta, res.eta, res.level_costs))]
        write_csv(dest / "levels.csv", rows, LEVEL_COLUMNS)
    print(f"{res.method} estimate {fmt(res.value)} +- {fmt(math.sqrt(res.variance))} "
          f"L={res.final_level} cost={fmt(res.total_cost)}")
    if not res.converged:
        _err(f"bias target not met by level {res.final_level}")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_plan(args) -> int:
    try:
        moments = load_moments(args.moments)
        if args.v is not None:
            v = args.v
        elif args.mse is not None:
            v = math.sqrt(args.mse * 0.5)
        else:
            raise ValueError("give --v or --mse")
        pm = planner.mlmc_plan(moments, v)
        pw = planner.wmlmc_plan(moments, v)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _err(f"{args.moments}: {exc}")
        return EXIT_INPUT
    dest = out_dir(args)
    mc = planner.single_level_cost(moments, v) ** 2
    summary = {"v": v, "cost_mc": mc, "cost_mlmc": pm.cost, "cost_wmlmc": pw.cost,
               "ratio": pm.cost / pw.cost if pw.cost > 0 else None,
               "coarsest_mlmc": pm.coarsest, "coarsest_wmlmc": pw.coarsest}
    write_json(dest / "plan.json", {"mlmc": pm.to_dict(), "wmlmc": pw.to_dict(), "summary": summary})
    rows = []
    for l in range(len(moments)):
        rows.append({"level": l,
                     "n_mlmc": pm.n_samples[l], "n_wmlmc": pw.n_samples[l],
                     "theta_wmlmc": pw.levels[l].theta, "big_theta_wmlmc": pw.big_theta[l],
                     "delta_mlmc": pm.levels[l].delta, "delta_wmlmc": pw.levels[l].delta,
                     "eta": moments[l].eta})
    write_csv(dest / "plan.csv", rows)
    print(f"MLMC cost {fmt(pm.cost)}  WMLMC cost {fmt(pw.cost)}  ratio {fmt(summary['ratio'])}")
    return EXIT_OK


def cmd_figures(args) -> int:
    dest = out_dir(args)
    which = figures.ALL if args.which == "all" else (args.which,)
    for name in which:
        if name == "fig1":
            write_csv(dest / "fig1.csv", figures.two_level_rows())
        elif name == "fig2":
            write_csv(dest / "fig2.csv", figures.three_level_rows())
        elif name == "fig7":
            rows = figures.histogram_runs(reps=args.reps, target_mse=args.mse or 1e-5,
                                          seed=args.seed or 0, threads=args.threads)
            write_csv(dest / "fig7_runs.csv", rows)
            write_csv(dest / "fig7_hist.csv", figures.histogram_bins(rows))
        else:
            ms, sweep, levels = figures.mc_figure(name, args.samples_per_level,
                                                  seed=args.seed or 0, threads=args.threads,
                                                  finest=args.finest)
            write_csv(dest / f"{name}_costs.csv", sweep)
            write_csv(dest / f"{name}_levels.csv", levels)
            write_json(dest / f"{name}_moments.json", moments_to_table(ms))
        print(f"{name}: written to {dest}")
    return EXIT_OK


def _parse_index(text):
    try:
        return mimc.as_index([int(x) for x in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad index {text!r}") from exc


def cmd_mimc_plan(args) -> int:
    upper = args.upper
    if args.dim is not None and len(upper) != args.dim:
        _err(f"--upper has {len(upper)} entries but --dim is {args.dim}")
        return EXIT_INPUT
    try:
        if args.oracle:
            oracle = mimc.TableOracle.load(args.oracle)
        else:
            d = len(upper)
            oracle = mimc.SeparableModel(bias=[0.5] * d, scale=[0.3] * d, decay=[2.0] * d)
        plan = mimc.mimc_plan(upper, oracle, args.v, weights=args.weights)
        plain = mimc.mimc_plan(upper, oracle, args.v, weights="mimc")
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except OptimizerError as exc:
        _err(f"{exc} (best value {exc.best_f})")
        return EXIT_INPUT
    dest = out_dir(args)
    out = plan.to_dict()
    out["unweighted_cost"] = plain.planned_cost
    write_json(dest / "mimc_plan.json", out)
    print(f"weighted cost {fmt(plan.planned_cost)}  unweighted cost {fmt(plain.planned_cost)}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wmlmc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", parents=[common], help="adaptive estimate from a config file")
    e.add_argument("--config", required=True)
    e.add_argument("--method", choices=[m.value for m in driver.Method])
    e.set_defaults(func=cmd_estimate)

    pl = sub.add_parser("plan", parents=[common], help="MLMC and WMLMC plans from a moment table")
    pl.add_argument("--moments", required=True)
    g = pl.add_mutually_exclusive_group(required=True)
    g.add_argument("--v", type=float, help="target standard deviation")
    g.add_argument("--mse", type=float, help="target MSE (half goes to variance)")
    pl.set_defaults(func=cmd_plan)

    f = sub.add_parser("figures", parents=[common], help="write figure datasets as CSV")
    f.add_argument("which", choices=list(figures.ALL) + ["all"])
    f.add_argument("--samples-per-level", type=int, default=100_000)
    f.add_argument("--finest", type=int, help="override the finest level of MC figures")
    f.add_argument("--reps", type=int, default=20, help="repetitions for fig7")
    f.add_argument("--mse", type=float, help="target MSE for fig7 (default 1e-5)")
    f.set_defaults(func=cmd_figures)

    m = sub.add_parser("mimc-plan", parents=[common], help="weighted multi-index plan")
    m.add_argument("--dim", type=int)
    m.add_argument("--upper", type=_parse_index, required=True, help="top index, e.g. 2,2")
    m.add_argument("--oracle", help="covariance table JSON (default: synthetic separable model)")
    m.add_argument("--v", type=float, default=0.01)
    m.add_argument("--weights", choices=["optimal", "mimc"], default="optimal")
    m.set_defaults(func=cmd_mimc_plan)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "samples_per_level", 2) < 2 or args.threads < 1:
        _err("--samples-per-level must be >= 2 and --threads >= 1")
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
