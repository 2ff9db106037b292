"""Command-line entry point: ``udistill <stage|run|eval> --config <path>``.

Stage subcommands bring the run up to that stage (earlier pending stages run
first); ``run`` executes the whole distillation pipeline; ``eval`` scores one
method on the test split.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import EVAL_METHODS, STAGES, RunConfig, run_distill, run_eval


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udistill",
        description="Uncertainty distillation pipeline: sample, calibrate, annotate, evaluate.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the pipeline up to the {stage} stage")
        p.add_argument("--config", required=True, help="run config file (JSON or YAML)")

    p = sub.add_parser("run", help="run the full distillation pipeline")
    p.add_argument("--config", required=True, help="run config file (JSON or YAML)")

    p = sub.add_parser("eval", help="evaluate a method on the test split")
    p.add_argument("--config", required=True, help="run config file (JSON or YAML)")
    p.add_argument("--method", required=True, choices=EVAL_METHODS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = RunConfig.from_file(args.config)

    if args.command == "eval":
        report = run_eval(config, args.method)
        for line in report.summary_lines():
            print(line)
        print(f"artifacts under {config.run_dir() / 'eval'}")
        return 0

    until = "emit" if args.command == "run" else args.command
    manifest = run_distill(config, until=until)
    for stage in STAGES:
        print(f"{stage:<10} {manifest.stage_status(stage)}")
    for name, path in manifest.data["artifacts"].items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
