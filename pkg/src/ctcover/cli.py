"""Command-line entry point.

Every stage subcommand runs the pipeline up to and including that stage;
upstream stages are served from the output directory's cache when their
inputs are unchanged.

Exit codes: 0 success, 2 config error, 3 infeasible problem, 4 stage failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import SOLVER_NAMES, load_config, validate
from .errors import ConfigError, InfeasibleProblem, StageFailure
from .pipeline import STAGES, compare_solvers, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_STAGE = 0, 2, 3, 4

log = logging.getLogger("ctcover")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config (JSON)")
    common.add_argument("--out", help="output directory (overrides output_dir in the config)")
    common.add_argument("--solver", choices=SOLVER_NAMES, help="solver for select/recon/evaluate/run")
    common.add_argument("--threads", type=int, default=1, help="worker threads for projection")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ctcover", description="Coverage-optimal CT view selection")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the pipeline through the {stage} stage")
    sub.add_parser("run", parents=[common], help="full pipeline for one solver")
    sub.add_parser("compare", parents=[common], help="run all configured solvers and write comparison.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.solver:
            cfg = dataclasses.replace(cfg, solver=args.solver)
            validate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or cfg.output_dir
    try:
        if args.command == "compare":
            rows = compare_solvers(cfg, out, threads=args.threads)
            for row in rows:
                print(f"{row['approach']:>9}  coverage={row['coverage_fraction']:.4f}  gap={row['gap']:.4f}  "
                      f"ssim={row['ssim']:.4f}")
        else:
            until = "evaluate" if args.command == "run" else args.command
            manifest = run_pipeline(cfg, out, solvers=[cfg.solver], until=until, threads=args.threads)
            for stage in manifest["stages"]:
                print(f"{stage['stage']:<22} {'cached' if stage['cache_hit'] else 'computed'}")
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE if isinstance(exc.cause, InfeasibleProblem) else EXIT_STAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
