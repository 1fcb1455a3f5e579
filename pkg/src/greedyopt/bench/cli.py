"""The ``bench`` command line: run experiments, list them, fit traces.

Exit codes: 0 success, 2 configuration error, 3 solver error (partial
outputs are preserved).
"""

from __future__ import annotations

import argparse
import sys

from ..core import DegenerateTraceError, fit_rate
from .experiments import EXPERIMENTS, BenchConfigError, load_config, run_experiment
from .io import read_trace_csv

_MODELS = {"powerlaw": "powerLaw", "geometric": "geometric"}


def _parse_window(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise BenchConfigError(f"window must look like a:b, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench",
                                     description="greedyopt experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment config (TOML)")
    run_p.add_argument("config", help="path to the experiment config file")

    sub.add_parser("list", help="list known experiments")

    fit_p = sub.add_parser("fit", help="fit a decay model to a trace CSV")
    fit_p.add_argument("trace", help="path to a trace CSV")
    fit_p.add_argument("--model", choices=sorted(_MODELS), required=True)
    fit_p.add_argument("--window", required=True, metavar="A:B",
                       help="iteration window, inclusive")
    fit_p.add_argument("--optimum", type=float, default=None,
                       help="known optimum to subtract before fitting")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in EXPERIMENTS:
            print(name)
        return 0
    if args.command == "run":
        try:
            config = load_config(args.config)
        except BenchConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        try:
            summary = run_experiment(config)
        except BenchConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except Exception as exc:  # solver failure; partial outputs remain
            print(f"solver error: {exc}", file=sys.stderr)
            return 3
        print(f"wrote {config.output_dir}/summary.json "
              f"({len(summary['runtime_seconds'])} runs)")
        return 0
    if args.command == "fit":
        try:
            window = _parse_window(args.window)
        except BenchConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        try:
            trace = read_trace_csv(args.trace)
            fit = fit_rate(trace, _MODELS[args.model], window, optimum=args.optimum)
        except (OSError, ValueError, DegenerateTraceError) as exc:
            print(f"fit error: {exc}", file=sys.stderr)
            return 3
        print(f"model={fit.model} slope={fit.slope:.6g} "
              f"r_squared={fit.r_squared:.6g} points={fit.num_points}")
        return 0
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
