"""Command line interface for campaign workflows.

    iondyne simulate --config c.yaml --out DIR [--seed N]
    iondyne fit      --config c.yaml --out DIR [--seed N] [--threads K]
    iondyne derive   --config c.yaml --out DIR [--allow-unconverged]
    iondyne report   --config c.yaml --out DIR [--fixed-clock]

Stages communicate only through the output directory, so each can be
rerun or inspected in isolation. On any domain failure the process
prints a one-line JSON error record to stderr and exits with status 2;
stack traces are reserved for genuine bugs.
"""

from __future__ import annotations

import argparse
import json
import sys

from pathlib import Path

from .config import load_config
from .errors import IondyneError, ValidationError
from .pipeline import RESULTS_DIR, run_derive, run_fit, run_simulate
from .report import run_report


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iondyne",
        description="simulate, fit, and reduce dispersive/absorptive decay-rate campaigns",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="campaign YAML file")
        p.add_argument("--out", required=True, help="campaign output directory")
        return p

    p = stage("simulate", "generate synthetic shot datasets")
    p.add_argument("--seed", type=int, default=0, help="root seed for all stochastic draws")

    p = stage("fit", "fit every run's scans to estimate records")
    p.add_argument("--seed", type=int, default=0, help="root seed for the samplers")
    p.add_argument("--threads", type=int, default=1, help="worker processes for per-run fits")

    p = stage("derive", "reduce estimates to the final physical quantities")
    p.add_argument("--allow-unconverged", action="store_true",
                   help="average in runs whose sampler failed its convergence check")

    p = stage("report", "render the human-readable report and figures")
    p.add_argument("--fixed-clock", action="store_true",
                   help="emit a constant timestamp so reruns are byte-identical")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "simulate":
            paths = run_simulate(config, args.out, seed=args.seed)
        elif args.command == "fit":
            if args.threads < 1:
                raise ValidationError("--threads must be at least 1")
            paths = run_fit(config, args.out, seed=args.seed, threads=args.threads)
        elif args.command == "derive":
            run_derive(config, args.out, allow_unconverged=args.allow_unconverged)
            paths = [Path(args.out) / RESULTS_DIR / name
                     for name in ("summary.txt", "per_run.csv", "budget.csv")]
        else:
            paths = run_report(args.out, fixed_clock=args.fixed_clock)
    except IondyneError as exc:
        record = {"error": exc.kind, "message": str(exc)}
        field = getattr(exc, "field", None)
        if field is not None:
            record["field"] = field
        print(json.dumps(record), file=sys.stderr)
        return 2
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
