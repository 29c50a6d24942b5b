"""Command-line entry point: ``dld estimate | simulate | table1 | verify``.

Exit codes: 0 success, 1 invalid input, 2 failed verification.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from . import __version__
from .estimators import FIGURE_ESTIMATORS, EstimatorId
from .io import (
    DataValidationError,
    SigmaPolicy,
    atomic_write,
    back_solve_sigma,
    bundled_dataset,
    estimate_command,
    ingest_csv,
    rows_to_csv,
)
from .model import TrialDesign
from .simulation import SweepConfig, improvement_table, run_sweep

EXIT_OK, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2

SWEEP_HEADER = ("n1", "n2", "sigma", "theta", "estimator", "metric", "value", "se", "reps", "seed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None):
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


def theta_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    if not (math.isfinite(step) and step > 0):
        raise UsageError("--theta-step must be positive")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi < lo:
        raise UsageError("need 0 <= --theta-min <= --theta-max")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + k * step, 12) for k in range(count))


def _cmd_estimate(args) -> int:
    ds = ingest_csv(args.data) if args.data else bundled_dataset()
    if args.sigma is not None and args.sigma_from_umvcue is not None:
        raise UsageError("--sigma and --sigma-from-umvcue are mutually exclusive")
    if args.sigma_from_umvcue is not None:
        policy = SigmaPolicy.fixed(back_solve_sigma(ds, args.sigma_from_umvcue))
    elif args.sigma is not None:
        policy = SigmaPolicy.fixed(args.sigma)
    else:
        policy = SigmaPolicy()
    report = estimate_command(ds, policy)
    if args.sigma_from_umvcue is not None:
        report = type(report)(**{**report.__dict__,
                                 "sigma_source": f"back-solved from UMVCUE={args.sigma_from_umvcue}"})
    text = {"json": report.to_json, "csv": report.to_csv, "table": report.table}[args.format]()
    _emit(text, args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    grid = theta_grid(args.theta_min, args.theta_max, args.theta_step)
    tags = tuple(EstimatorId.parse(t) for t in args.estimators.split(",") if t.strip())
    config = SweepConfig(TrialDesign(args.n1, args.n2, args.sigma), grid, args.reps, args.seed,
                         tags, args.crn)
    curve = run_sweep(config, args.threads)
    rows = list(curve.rows())
    text = rows_to_csv(SWEEP_HEADER, (tuple(r) + (args.reps, args.seed) for r in rows))
    _emit(text, args.out)
    if args.figures:
        from .plotting import render_figures

        for path in render_figures(rows, args.figures):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_table1(args) -> int:
    table = improvement_table(replications=args.reps, seed=args.seed,
                              relative_to=args.relative_to, threads=args.threads)
    header = ("theta",) + tuple(f"({n1},{n2})" for n1, n2 in table.designs)
    rows = ((th,) + tuple(float(v) for v in table.values[i]) for i, th in enumerate(table.theta_grid))
    _emit(rows_to_csv(header, rows), args.out)
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import report, run_all

    result = report(run_all(quick=args.quick))
    _emit(json.dumps(result, indent=2) + "\n", args.out)
    return EXIT_OK if result["passed"] else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dld", description="Selected-arm mean estimation in two-stage "
                                        "drop-the-losers trials.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", help="estimate the selected mean from trial data")
    e.add_argument("--data", help="CSV with columns stage,arm,value (default: bundled example)")
    e.add_argument("--sigma", type=float, help="known sigma (default: pooled stage-1 SD)")
    e.add_argument("--sigma-from-umvcue", type=float, metavar="VALUE",
                   help="use the sigma at which the UMVCUE equals VALUE")
    e.add_argument("--format", choices=("table", "json", "csv"), default="table")
    e.add_argument("--out")
    e.set_defaults(func=_cmd_estimate)

    s = sub.add_parser("simulate", help="Monte Carlo MSE and bias over a theta grid")
    s.add_argument("--n1", type=int, default=5)
    s.add_argument("--n2", type=int, default=5)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--theta-min", type=float, default=0.0)
    s.add_argument("--theta-max", type=float, default=3.0)
    s.add_argument("--theta-step", type=float, default=0.1)
    s.add_argument("--reps", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--estimators", default=",".join(t.value for t in FIGURE_ESTIMATORS),
                   help="comma-separated estimator tags")
    s.add_argument("--crn", action=argparse.BooleanOptionalAction, default=True,
                   help="common random numbers across estimators")
    s.add_argument("--threads", type=int)
    s.add_argument("--out")
    s.add_argument("--figures", metavar="DIR", help="also render PNG plots into DIR")
    s.set_defaults(func=_cmd_simulate)

    t = sub.add_parser("table1", help="percentage risk improvement of SINGLE_STAGE_IMPROVED")
    t.add_argument("--reps", type=int, default=1_000_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--relative-to", choices=("improved", "base"), default="improved",
                   help="risk whose value divides the reduction")
    t.add_argument("--threads", type=int)
    t.add_argument("--out")
    t.set_defaults(func=_cmd_table1)

    v = sub.add_parser("verify", help="run the numerical self-checks, JSON report")
    v.add_argument("--quick", action="store_true", help="smaller case counts")
    v.add_argument("--out")
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, DataValidationError, ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dld: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
