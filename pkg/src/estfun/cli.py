"""Command line front end.

    estfun run <config.toml> [--threads K] [--seed U64]
    estfun estimate <data.csv> --estimator ID [--delta D] [--rho R ...] [--model ou]

Exit codes: 0 success, 1 error, 2 Monte Carlo summary flagged unreliable,
3 no root found (the estimate is the failure point).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from estfun import kernels
from estfun.asymptotics import NoninvertibleJacobianError, sandwich
from estfun.catalog import ESTIMATOR_IDS, build_estimator
from estfun.core import EstfunError, Solved
from estfun.experiments import ConfigError, experiment_from_config, load_config
from estfun.mc import McSummary, run_replications
from estfun.simulate import read_path_csv
from estfun.solver import SolverConfig, estimate

EXIT_OK, EXIT_ERROR, EXIT_UNRELIABLE, EXIT_DELTA = 0, 1, 2, 3


def _fmt(v) -> str:
    return "[" + ", ".join(f"{x:.6g}" for x in np.atleast_1d(v)) + "]"


def digest(summary: McSummary) -> str:
    lines = [f"experiment {summary.name}  (seed {summary.master_seed}, backend {kernels.BACKEND})"]
    theta_bar = summary.sizes[0].theta_bar
    lines.append(f"theta_bar = {_fmt(theta_bar)}")
    if summary.theta0 is not None and not np.allclose(summary.theta0, theta_bar, rtol=0, atol=1e-12):
        lines.append(f"theta0    = {_fmt(summary.theta0)}  (differs from theta_bar: misspecified or discretized model)")
    lines.append(f"{'n':>8} {'delta':>10} {'solved':>7} {'delta#':>6}  {'mean':<24} {'sd':<24} coverage")
    for s in summary.sizes:
        cov = "-" if s.coverage is None else _fmt(s.coverage)
        lines.append(
            f"{s.n:>8d} {s.delta:>10.4g} {s.solved_count:>7d} {s.delta_count:>6d}  {_fmt(s.mean):<24} {_fmt(s.sd):<24} {cov}"
            + ("  UNRELIABLE" if s.unreliable else "")
        )
    for scale, slopes in summary.rate_slopes.items():
        lines.append(f"rate slope vs {scale}: {_fmt(slopes)}")
    return "\n".join(lines)


def _threads(arg) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("ESTFUN_THREADS")
    return int(env) if env else None


def cmd_run(args) -> int:
    doc, text = load_config(args.config)
    exp = experiment_from_config(doc, text, threads=_threads(args.threads), seed=args.seed)
    summary = run_replications(exp)
    out = doc.get("output", {})
    summary_path = Path(out.get("summary", f"{exp.name}_summary.json"))
    csv_path = Path(out.get("replications_csv", f"{exp.name}_replications.csv"))
    for p in (summary_path, csv_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    summary.write_json(summary_path)
    summary.write_csv(csv_path)
    print(digest(summary))
    print(f"summary: {summary_path}\nreplications: {csv_path}")
    return EXIT_UNRELIABLE if summary.unreliable else EXIT_OK


def cmd_estimate(args) -> int:
    data = read_path_csv(args.data, delta=args.delta)
    if data.n < 1:
        raise ValueError(f"{args.data}: need at least two observations")
    g = build_estimator(args.estimator, delta=data.delta if data.delta > 0 else None, model=args.model)
    cfg = SolverConfig() if args.multistart is None else SolverConfig(multistart_points=args.multistart)
    out = estimate(g, data, cfg, rho=args.rho)
    if not isinstance(out, Solved):
        print(json.dumps(out.to_dict()))
        return EXIT_DELTA
    result = out.to_dict()
    try:
        result["report"] = sandwich(g, data, out.theta).to_dict()
    except NoninvertibleJacobianError as exc:
        result["report"] = None
        result["report_error"] = str(exc)
    print(json.dumps(result, indent=2))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors share exit code 1 with other errors; 2 means "unreliable"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="estfun", description="Estimating-function inference for stochastic processes")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a Monte Carlo experiment from a TOML config")
    run.add_argument("config")
    run.add_argument("--threads", type=int, default=None, help="worker threads (default: $ESTFUN_THREADS or config)")
    run.add_argument("--seed", type=int, default=None, help="override mc.master_seed")
    run.set_defaults(func=cmd_run)

    est = sub.add_parser("estimate", help="estimate from a CSV with header 't,x' or 'x'")
    est.add_argument("data")
    est.add_argument("--estimator", required=True, choices=ESTIMATOR_IDS)
    est.add_argument("--delta", type=float, default=None, help="sampling step (default: from the t column)")
    est.add_argument("--rho", type=float, nargs="+", default=None, help="anchor for rho-centered root selection")
    est.add_argument("--model", default="ou", help="SDE model for hf_* estimators")
    est.add_argument("--multistart", type=int, default=None)
    est.add_argument("--threads", type=int, default=None, help="accepted for symmetry; estimation is serial")
    est.add_argument("--seed", type=int, default=None, help="accepted for symmetry; estimation is deterministic")
    est.set_defaults(func=cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (EstfunError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
