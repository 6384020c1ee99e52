"""Command-line interface: ``hte-test <subcommand> ...``.

Exit codes: 0 success, 1 failed oracle, 2 configuration error, 3 data error,
4 numerical degeneracy.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bootstrap import resolve_threads
from .data import ColumnSpec, load_csv, read_columns
from .diagnostics import chi_squared_independence, ks_two_sample
from .errors import ConfigError, DataError, HteError
from .kernels import KernelSpec
from .linear import LinearTestConfig, linear_test
from .np_test import NpTestConfig, np_test
from .simulation import (
    LINEAR_DGPS,
    NP_DGPS,
    POWER_COLUMNS,
    TABLE_COLUMNS,
    SimScenario,
    oracle_checks,
    results_to_csv,
    run_cell,
)

ORACLE_DEFAULTS = {"example1": (1.0, 4.0), "example2": (0.0, 0.5, 1.0), "example3": (0.0, 0.5, 1.0),
                   "example4": (0.0, 0.5, 1.0)}
CHI2_MAX_LEVELS = 20


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one-line diagnostic instead of usage + message
        raise ConfigError(message)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="CSV file with a header row")
    g.add_argument("--y", required=True, help="outcome column")
    g.add_argument("--z", required=True, type=_names, help="treatment columns, comma separated")
    g.add_argument("--w", required=True, type=_names, help="instrument columns, comma separated")
    g.add_argument("--x", required=True, help="covariate column")
    g.add_argument("--k", default="1",
                   help="tested instrument: column name or 1-based position in W after any intercept")
    g.add_argument("--z-intercept", action="store_true", help="prepend a column of ones to Z")
    g.add_argument("--w-intercept", action="store_true", help="prepend a column of ones to W")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker cap (default: HTE_TEST_THREADS or all cores)")
    p.add_argument("--out", default=None, help="output file")


def build_parser():
    parser = _Parser(prog="hte-test", description="Tests for homogeneous treatment effects.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test-linear", help="linear (TSLS) test")
    _add_data_flags(p)
    p.add_argument("--B", type=_positive_int, default=1000, help="bootstrap replicates")
    p.add_argument("--pvalue", choices=("symmetric", "equal-tailed"), default="symmetric")
    _add_common(p)

    p = sub.add_parser("test-np", help="nonparametric (Tikhonov NPIV) test")
    _add_data_flags(p)
    p.add_argument("--B", type=_positive_int, default=1000)
    p.add_argument("--pvalue", choices=("symmetric", "equal-tailed"), default="symmetric")
    p.add_argument("--lambda", dest="lam", default="cv", help="'cv' or a positive number")
    p.add_argument("--bandwidth", default="silverman", help="'silverman' or 'h_z,h_w'")
    p.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    p.add_argument("--c-h", type=float, default=1.0)
    p.add_argument("--c-lambda", type=float, default=1.0)
    _add_common(p)

    p = sub.add_parser("diagnose", help="independence pre-test of X and the tested instrument")
    p.add_argument("--data", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--w", required=True, help="the tested instrument column")
    p.add_argument("--method", choices=("auto", "chi-squared", "ks"), default="auto")
    p.add_argument("--out", default=None)

    p = sub.add_parser("simulate", help="Monte Carlo size tables and power curves")
    p.add_argument("--dgp", required=True, choices=LINEAR_DGPS + NP_DGPS)
    dev = p.add_mutually_exclusive_group()
    for flag in ("--deviation", "--rho", "--gamma", "--alpha"):
        dev.add_argument(flag, dest="deviation", type=_floats)
    p.add_argument("--n", type=_ints, default=[500], help="sample sizes, comma separated")
    p.add_argument("--reps", type=_positive_int, default=1000, help="Monte Carlo replications")
    p.add_argument("--B", type=_positive_int, default=1000)
    engine = p.add_mutually_exclusive_group()
    engine.add_argument("--warp-speed", action="store_true", help="one bootstrap draw per replication")
    engine.add_argument("--fast", action="store_true", help="alias of --warp-speed for size tables")
    engine.add_argument("--full-bootstrap", action="store_true", help="B draws per replication")
    p.add_argument("--c-h", type=_floats, default=[1.0])
    p.add_argument("--c-lambda", type=_floats, default=[1.0])
    p.add_argument("--levels", type=_floats, default=None)
    _add_common(p)

    p = sub.add_parser("oracle", help="analytical oracle checks")
    p.add_argument("--example", required=True, choices=tuple(ORACLE_DEFAULTS) + ("1", "2", "3", "4"))
    p.add_argument("--param", type=_floats, default=None, help="alpha or rho values")
    p.add_argument("--n-large", type=int, default=10**6)
    p.add_argument("--npiv-n", type=int, default=None, help="also run NPIV at this n (example 4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    return parser


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


def _dataset(args):
    specs = [ColumnSpec("outcome", args.y), ColumnSpec("covariate", args.x)]
    specs += [ColumnSpec("treatment", c, args.z_intercept) for c in args.z]
    specs += [ColumnSpec("instrument", c, args.w_intercept) for c in args.w]
    return load_csv(args.data, specs, args.k)


def _decision(report):
    return "; ".join(f"reject at {lv:.0%}: {'yes' if report.reject(lv) else 'no'}" for lv in (0.05, 0.10))


def _columns_echo(args):
    return {"data": str(args.data), "y": args.y, "z": args.z, "w": args.w, "x": args.x,
            "z_intercept": args.z_intercept, "w_intercept": args.w_intercept}


def _report_out(args, report, label):
    cfg = dict(report.config)
    cfg["columns"] = _columns_echo(args)
    report = type(report)(report.statistic, report.replicates, report.p_symmetric, report.p_equal_tailed,
                          report.discarded_count, cfg)
    out = args.out or f"{label}_report.json"
    _write(out, report.to_json())
    mode = report.config.get("pvalue_mode", "symmetric")
    print(f"{label} test: statistic={report.statistic:.6g}, p-value={report.p_value:.4f} ({mode}, "
          f"B={report.config['B']}, discarded={report.discarded_count}); {_decision(report)} -> {out}")


def cmd_test_linear(args):
    d = _dataset(args)
    cfg = LinearTestConfig(B=args.B, seed=args.seed, pvalue_mode=args.pvalue)
    _report_out(args, linear_test(d, cfg, threads=args.threads), "linear")


def _policy(text, name):
    if text in ("cv", "silverman"):
        return text
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--{name}: cannot parse {text!r}") from None
    return vals[0] if name == "lambda" and len(vals) == 1 else tuple(vals)


def cmd_test_np(args):
    d = _dataset(args)
    lam = _policy(args.lam, "lambda")
    bw = _policy(args.bandwidth, "bandwidth")
    if isinstance(lam, tuple) or lam == "silverman":
        raise ConfigError("--lambda must be 'cv' or a single positive number")
    if bw == "cv" or (isinstance(bw, tuple) and len(bw) != 2):
        raise ConfigError("--bandwidth must be 'silverman' or 'h_z,h_w'")
    cfg = NpTestConfig(B=args.B, seed=args.seed, lam=lam, bandwidth=bw, kernel=KernelSpec(args.kernel),
                       pvalue_mode=args.pvalue, c_h=args.c_h, c_lambda=args.c_lambda)
    _report_out(args, np_test(d, cfg, threads=args.threads), "nonparametric")


def cmd_diagnose(args):
    x, w = read_columns(args.data, [args.x, args.w])
    method = args.method
    if method == "auto":
        discrete = np.unique(w).size <= CHI2_MAX_LEVELS and np.unique(x).size <= CHI2_MAX_LEVELS
        method = "chi-squared" if discrete else "ks"
    if method == "chi-squared":
        rep = chi_squared_independence(x, w)
    else:
        rep = ks_two_sample(x, w)
    out = dict(rep.to_dict())
    out["config"] = {"data": str(args.data), "x": args.x, "w": args.w, "method": args.method}
    path = args.out or "diagnose_report.json"
    _write(path, json.dumps(out, indent=2) + "\n")
    verdict = "rejects" if rep.p_value < 0.05 else "does not reject"
    print(f"{rep.method}: statistic={rep.statistic:.6g}, p-value={rep.p_value:.4f}; "
          f"{verdict} independence at 5% -> {path}")


def cmd_simulate(args):
    deviations = args.deviation or [0.0]
    is_table = all(v == 0.0 for v in deviations)
    if args.full_bootstrap:
        warp = False
    elif args.warp_speed or args.fast:
        warp = True
    else:
        # full bootstrap only for the linear size table
        warp = not (is_table and args.dgp in LINEAR_DGPS)
    if not is_table and 0.0 not in deviations:
        raise ConfigError("power-curve grid must include deviation 0")
    levels = tuple(args.levels) if args.levels else ((0.05, 0.10) if is_table else (0.05,))
    threads = resolve_threads(args.threads)
    results = []
    t0 = time.perf_counter()
    for n in args.n:
        for c_h in args.c_h:
            for c_lam in args.c_lambda:
                for dev in deviations:
                    scn = SimScenario(args.dgp, dev, n, args.reps, B=args.B, warp_speed=warp, c_h=c_h,
                                      c_lambda=c_lam, levels=levels, seed=args.seed)
                    res = run_cell(scn, threads=threads)
                    results.append(res)
                    rates = ", ".join(f"{lv:g}: {res.rejection_rates[lv]:.4f} (se {res.mc_se[lv]:.4f})"
                                      for lv in levels)
                    print(f"{args.dgp} deviation={dev:g} n={n} C_h={c_h:g} C_lambda={c_lam:g}: {rates} "
                          f"[{res.runtime_s:.1f}s]", flush=True)
    kind = "table" if is_table else "power"
    header = {
        "dgp": args.dgp,
        "deviations": [float(v) for v in deviations],
        "n": list(args.n),
        "mc_reps": args.reps,
        "B": None if warp else args.B,
        "engine": "warp-speed" if warp else "bootstrap",
        "c_h": list(args.c_h),
        "c_lambda": list(args.c_lambda),
        "levels": list(levels),
        "seed": args.seed,
    }
    out = args.out or f"{args.dgp}_{kind}_{time.strftime('%Y%m%dT%H%M%S')}.csv"
    _write(out, results_to_csv(results, TABLE_COLUMNS if is_table else POWER_COLUMNS, header))
    summary = {
        "config": header,
        "cells": [
            {"scenario": r.scenario.to_dict(), "valid_reps": r.valid_reps,
             "rejection_rates": {repr(k): v for k, v in r.rejection_rates.items()},
             "mc_se": {repr(k): v for k, v in r.mc_se.items()}}
            for r in results
        ],
    }
    json_path = str(Path(out).with_suffix(".json"))
    _write(json_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} and {json_path} in {time.perf_counter() - t0:.1f}s")


def cmd_oracle(args):
    example = args.example if args.example.startswith("example") else f"example{args.example}"
    params = args.param or ORACLE_DEFAULTS[example]
    reports = [oracle_checks(example, a, args.n_large, args.seed, npiv_n=args.npiv_n) for a in params]
    for rep in reports:
        for c in rep.checks:
            status = "pass" if c.passed else "FAIL"
            print(f"{status} {example} parameter={rep.parameter:g} {c.name}: estimate {c.estimate:.6g}, "
                  f"target {c.target:.6g}, tolerance {c.tolerance:.3g}")
    doc = {"config": {"example": example, "parameters": [float(a) for a in params], "n_large": args.n_large,
                      "npiv_n": args.npiv_n, "seed": args.seed},
           "reports": [r.to_dict() for r in reports]}
    path = args.out or f"{example}_oracle.json"
    _write(path, json.dumps(doc, indent=2) + "\n")
    for rep in reports:
        rep.raise_on_failure()


COMMANDS = {"test-linear": cmd_test_linear, "test-np": cmd_test_np, "diagnose": cmd_diagnose,
            "simulate": cmd_simulate, "oracle": cmd_oracle}


def run(argv=None):
    """Parse ``argv`` and run the subcommand; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except HteError as exc:
        print(f"hte-test: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        # anything not already classified came from reading the input
        print(f"hte-test: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


def main(argv=None):
    sys.exit(run(argv))
