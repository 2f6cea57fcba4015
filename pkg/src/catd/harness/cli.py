"""Command-line entry point.

    catd <command> --config <file> [--set key=value]...

Exit codes: 0 success, 2 validation error, 3 missing prerequisite,
4 numeric divergence. CATD_SEED overrides the config seed.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import CatdError
from .config import load_config
from .pipeline import COMMANDS, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catd",
        description="EEG-conditioned BOLD diffusion pipeline (desk scale)",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument(
        "--config",
        default=None,
        help="JSON config file; omitted means the built-in desk-scale defaults",
    )
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. --set trainer.steps=200",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        artifact = run_pipeline(cfg, args.command)
    except CatdError as exc:
        print(f"catd {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"catd {args.command}: wrote {artifact}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
