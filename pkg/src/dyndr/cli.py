"""Command-line front end: ``estimate`` on a CSV file, ``simulate`` a DGP.

Exit status: 0 success, 2 configuration or schema error, 3 estimation failure.
Errors go to stderr as one JSON line followed by a human-readable line; the
report is the only thing written to the output stream.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from .data import Schema, read_csv, subgroup_indices
from .errors import ConfigError, DyndrError, EstimationError, SchemaError
from .estimator import DrConfig, estimate_dynamic_ate
from .simulation import (ESTIMATORS, MODELS, DgpSpec, HarnessConfig, format_table,
                         run_monte_carlo)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
FORMATS = ("json", "csv")
DEFAULT_ESTIMATORS = "dr-lasso,empdiff,oracle"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _columns(text):
    cols = [c.strip() for c in text.split(",") if c.strip()]
    if not cols:
        raise argparse.ArgumentTypeError("expected a comma-separated list of column names")
    return cols


def _shared(p):
    p.add_argument("--folds", type=int, default=5, help="cross-fitting folds K (default 5)")
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    p.add_argument("--clip-eps", type=float, default=0.01,
                   help="clip fitted propensities to [eps, 1 - eps] (default 0.01)")
    p.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    p.add_argument("--penalty-mix", type=float, default=1.0,
                   help="L1 share of the penalty; 1 is the Lasso (default 1.0)")
    p.add_argument("--output", default="-",
                   help="report path, '-' for stdout; 'json' or 'csv' select the format "
                        "and write to stdout")
    p.add_argument("--format", choices=FORMATS, default=None, help="report format (default json)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dyndr", description="Doubly robust dynamic treatment effects")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    est = sub.add_parser("estimate", help="estimate the effect of (1,1) vs (0,0) from a CSV file")
    est.add_argument("--data", required=True, help="input CSV with a header row")
    est.add_argument("--y-col", default="y")
    est.add_argument("--a1-col", default="a1")
    est.add_argument("--a2-col", default="a2")
    est.add_argument("--s1-cols", type=_columns, required=True, help="comma-separated S1 columns")
    est.add_argument("--s2-cols", type=_columns, required=True, help="comma-separated S2 columns")
    _shared(est)

    sim = sub.add_parser("simulate", help="Monte Carlo study on one data-generating process")
    sim.add_argument("--dgp", required=True, help=f"model id, one of {', '.join(MODELS)}")
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--d1", type=int, default=100)
    sim.add_argument("--d2", type=int, default=None, help="default: d1 for M1/M10, d1/2 otherwise")
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--estimators", type=_columns, default=_columns(DEFAULT_ESTIMATORS),
                     help=f"comma list from {', '.join(ESTIMATORS)} (default {DEFAULT_ESTIMATORS})")
    sim.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                     help="worker processes for replications (default: available cores)")
    _shared(sim)
    return parser


def _destination(args):
    fmt, out = args.format, args.output
    if out in FORMATS:
        if fmt is not None and fmt != out:
            raise ConfigError(f"--output {out} conflicts with --format {fmt}")
        fmt, out = out, "-"
    return fmt or "json", out


def _emit(text, out, stdout):
    if out == "-":
        stdout.write(text)
        stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def estimate_report(args, est, ds) -> dict:
    counts = {"n": ds.n}
    for a1 in (0, 1):
        counts[f"a1={a1}"] = int(subgroup_indices(ds, a1).size)
        for a2 in (0, 1):
            counts[f"path({a1},{a2})"] = int(subgroup_indices(ds, a1, a2).size)
    config = {"data": args.data, "y_col": args.y_col, "a1_col": args.a1_col,
              "a2_col": args.a2_col, "s1_cols": list(args.s1_cols),
              "s2_cols": list(args.s2_cols), "folds": args.folds, "seed": args.seed,
              "clip_eps": args.clip_eps, "level": args.level, "penalty_mix": args.penalty_mix}
    return {"command": "estimate", "config": config, "subgroup_counts": counts, **est.to_dict()}


def _estimate_csv(report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["theta_hat", "std_error", "ci_lower", "ci_upper", "level", "n", "k_folds", "sigma_hat2"]
    w.writerow(cols)
    lo, hi = report["ci"]
    vals = {**report, "ci_lower": lo, "ci_upper": hi}
    w.writerow([repr(vals[c]) if isinstance(vals[c], float) else vals[c] for c in cols])
    return buf.getvalue()


def cmd_estimate(args, stdout, stderr) -> int:
    fmt, out = _destination(args)
    cfg = DrConfig(k_folds=args.folds, seed=args.seed, clip_eps=args.clip_eps, level=args.level,
                   penalty_mix=args.penalty_mix)
    schema = Schema(args.y_col, args.a1_col, args.a2_col, args.s1_cols, args.s2_cols)
    try:
        ds = read_csv(args.data, schema)
    except OSError as exc:
        raise SchemaError(f"cannot read input: {exc.strerror or exc}") from exc
    if cfg.k_folds > ds.n:
        raise ConfigError(f"--folds {cfg.k_folds} exceeds the {ds.n} observations")
    est = estimate_dynamic_ate(ds, cfg)
    report = estimate_report(args, est, ds)
    _emit(_dump(report) if fmt == "json" else _estimate_csv(report), out, stdout)
    print(f"theta_hat={est.theta_hat:.6g} std_error={est.std_error:.6g} "
          f"ci=[{est.ci[0]:.6g}, {est.ci[1]:.6g}]", file=stderr)
    return EXIT_OK


def cmd_simulate(args, stdout, stderr) -> int:
    fmt, out = _destination(args)
    spec = DgpSpec(args.dgp, args.n, args.d1, args.d2, args.seed)
    unknown = [e for e in args.estimators if e not in ESTIMATORS]
    if unknown:
        raise ConfigError(f"unknown estimators {unknown}; choose from {', '.join(ESTIMATORS)}")
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    DrConfig(k_folds=args.folds, seed=args.seed, clip_eps=args.clip_eps, level=args.level,
             penalty_mix=args.penalty_mix)
    hc = HarnessConfig(k_folds=args.folds, clip_eps=args.clip_eps, level=args.level,
                       penalty_mix=args.penalty_mix)

    def progress(done, total):
        print(f"replication {done}/{total}", file=stderr)

    report = run_monte_carlo(spec, args.estimators, args.reps, args.seed, hc,
                             threads=args.threads, progress=progress)
    _emit(report.to_json() + "\n" if fmt == "json" else report.to_csv(), out, stdout)
    print(format_table(report), file=stderr)
    if any(report.failures.values()):
        print(f"failed replications: {report.failures}", file=stderr)
    return EXIT_OK


def _fail(stderr, code, kind, exc):
    print(json.dumps({"error": kind, "exit": code, "message": str(exc)}), file=stderr)
    print(f"dyndr: {kind} error: {exc}", file=stderr)
    return code


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        handler = cmd_estimate if args.command == "estimate" else cmd_simulate
        return handler(args, stdout, stderr)
    except SchemaError as exc:
        return _fail(stderr, EXIT_CONFIG, "schema", exc)
    except ConfigError as exc:
        return _fail(stderr, EXIT_CONFIG, "config", exc)
    except EstimationError as exc:
        return _fail(stderr, EXIT_ESTIMATION, "estimation", exc)
    except DyndrError as exc:
        return _fail(stderr, EXIT_ESTIMATION, "estimation", exc)


if __name__ == "__main__":
    sys.exit(main())
