"""Command-line entry point.

Exit codes for ``run``: 0 converged, 2 iteration budget exhausted,
3 divergence abort, 1 configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    ConfigError,
    bundled_config_names,
    run_experiment,
    run_sweep,
    verify_suite,
)
from .problems import ProblemError
from .protocols import DivergenceError, ProtocolError
from .topology import TopologyError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2
EXIT_DIVERGED = 3


def _add_overrides(sub):
    sub.add_argument("config", help="config file path or bundled config name")
    sub.add_argument("--out-dir", help="output directory (default: config, then $ROTCON_OUT_DIR)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--max-iters", type=int, help="override the iteration budget")
    sub.add_argument("--alpha", type=float, help="override the step/penalty weight")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotcon",
                                     description="Consensus on SO(n): experiment harness")
    commands = parser.add_subparsers(dest="command", required=True)

    runp = commands.add_parser("run", help="run one experiment config")
    _add_overrides(runp)

    sweepp = commands.add_parser("sweep", help="run an active-sensor sweep config")
    _add_overrides(sweepp)

    verifyp = commands.add_parser("verify", help="run the cross-module invariant battery")
    verifyp.add_argument("--quick", action="store_true", help="smaller sample counts")

    reportp = commands.add_parser("report", help="render figures from run outputs")
    reportp.add_argument("target", help="run directory or CSV file")
    reportp.add_argument("--out-dir", help="directory for the rendered figures")

    commands.add_parser("configs", help="list bundled experiment configs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = run_experiment(args.config, out_dir=args.out_dir, seed=args.seed,
                                     max_iters=args.max_iters, alpha=args.alpha)
            print(f"{summary.name}: {summary.status} after {summary.iterations} iterations, "
                  f"disagreement {summary.final_disagreement:.3e}, "
                  f"relative objective gap {summary.relative_objective_gap:.3e}")
            return EXIT_OK if summary.status == "converged" else EXIT_MAX_ITERS

        if args.command == "sweep":
            rows = run_sweep(args.config, out_dir=args.out_dir, seed=args.seed,
                             max_iters=args.max_iters, alpha=args.alpha)
            values = sorted({r.value for r in rows})
            print(f"sweep complete: {len(rows)} trials over values {values}")
            return EXIT_OK

        if args.command == "verify":
            report = verify_suite(quick=args.quick)
            print(json.dumps(report, indent=2))
            return EXIT_OK if report["all_passed"] else EXIT_ERROR

        if args.command == "report":
            from .report import ReportError, render_report
            try:
                for path in render_report(args.target, out_dir=args.out_dir):
                    print(f"wrote {path}")
            except ReportError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_ERROR
            return EXIT_OK

        if args.command == "configs":
            for name in bundled_config_names():
                print(name)
            return EXIT_OK
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ProtocolError, TopologyError, ProblemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
