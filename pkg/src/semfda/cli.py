"""Command-line entry point ``sem``.

Usage::

    sem ingest|fit|forecast|evaluate|verify --config <path> [--out <dir>] [--seed <u64>]

Exit codes are 0 on success, 1 on a failed oracle or a validation error, and
2 on an I/O or parse error. ``SEM_THREADS`` caps the worker count.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback

from .config import load_config, thread_count
from .errors import ParseError, SemError
from .pipeline import COMMANDS

EXIT_OK, EXIT_FAILURE, EXIT_IO = 0, 1, 2


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sem", description="Survival energy model mortality forecasting with functional data."
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "ingest": "read life tables (or generate a synthetic panel) into normalized form",
        "fit": "invert keys, smooth them and run functional PCA per key kind",
        "forecast": "forecast scores, predict and modify target-cohort mortality",
        "evaluate": "MSE tables of predictions against holdout data",
        "verify": "run the oracle suite",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", default=None, help="output folder (overrides [paths] out_dir)")
        p.add_argument("--seed", type=_u64, default=None, help="master seed (overrides [run] seed)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def _module_tag(err: BaseException) -> str:
    """Name of the innermost package module the error (or its original cause) passed through."""
    while err.__cause__ is not None:
        err = err.__cause__
    tag = "sem"
    for frame, _ in traceback.walk_tb(err.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("semfda."):
            tag = name.split(".", 1)[1]
    return tag


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    prefix = f"sem {args.command}"
    try:
        thread_count()  # validate SEM_THREADS before any work
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        result = COMMANDS[args.command](cfg)
    except ParseError as err:
        print(f"{prefix}: parse error [{_module_tag(err)}]: {err}", file=sys.stderr)
        return EXIT_IO
    except SemError as err:
        print(f"{prefix}: error [{_module_tag(err)}]: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as err:
        print(f"{prefix}: I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    for line in result.lines:
        print(line)
    for notice in result.notices:
        print(f"notice: {notice}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
