"""Command-line entry point.

    ilcforecast run --config config.yaml --out artifacts
    ilcforecast fit --config config.yaml --out artifacts
    ilcforecast --config config.yaml --stage evaluate --out artifacts

Exit status is 0 on success, 2 for configuration errors and 1 for a
failed stage (the message names the stage).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as config_mod
from .pipeline import STAGE_NAMES, StageError, run, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ilcforecast",
        description="Split-population duration forecasting pipeline.")
    parser.add_argument("command", nargs="?", choices=("run", *STAGE_NAMES),
                        help="stage to run, or 'run' for all stages")
    parser.add_argument("--config", required=True, help="YAML configuration file")
    parser.add_argument("--stage", choices=STAGE_NAMES, help="run a single stage")
    parser.add_argument("--out", default="artifacts", help="artifact directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel model fits")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.stage and args.command not in (None, args.stage):
        print(f"error: --stage {args.stage} conflicts with command {args.command}", file=sys.stderr)
        return 2
    stage = args.stage or args.command or "run"
    try:
        cfg = config_mod.load(args.config, seed=args.seed)
    except (config_mod.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if stage == "run":
            run(cfg, args.out, jobs=args.jobs)
        else:
            run_stage(cfg, stage, args.out, jobs=args.jobs)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 1
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
