"""Command-line entry point.

    medlogic <command> --config CONFIG.json [--jobs N] [--seed S]

Exit codes: 0 success, 2 configuration problem, 3 input parse/data problem,
4 generation backend failure, 5 internal error. Errors print one
machine-parsable line to stderr: "<ErrorClass>: <message>".
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import __version__
from .datasets import DuplicateId, MissingField, ParseError
from .gateway import GatewayError
from .kg import EmptyConcept, UnknownRelationError
from .matcher import LexiconError
from .metrics import DimensionMismatch, IdMismatch
from .pipeline import COMMANDS, ConfigError, load_config
from .rules import RangeRestrictionError, RuleSyntaxError

__all__ = ["main"]

_DATA_ERRORS = (
    ParseError,
    MissingField,
    DuplicateId,
    RuleSyntaxError,
    RangeRestrictionError,
    UnknownRelationError,
    LexiconError,
    EmptyConcept,
    DimensionMismatch,
    IdMismatch,
)

_COMMAND_HELP = {
    "build-kg": "extract entities and write one context graph per sample",
    "infuse": "apply the rule set to each context graph",
    "prep-lu": "emit understanding-stage training records",
    "prep-aqa": "emit answering-stage records and the gold answers",
    "generate": "request completions for the test split",
    "parse-lu": "parse generated triple text back into graphs",
    "evaluate": "score predictions against gold answers",
    "all": "run every step in order",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medlogic",
        description="Logic-infused knowledge-graph pipeline for medical QA datasets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, help_text in _COMMAND_HELP.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the JSON config file")
        cmd.add_argument(
            "--jobs", type=int, default=1,
            help="worker threads for per-sample stages (default 1)",
        )
        cmd.add_argument(
            "--seed", type=int, default=None,
            help="override the config's split_seed",
        )
    return parser


def _fail(exc: BaseException, code: int) -> int:
    message = str(exc).splitlines()[0] if str(exc) else exc.__class__.__name__
    print(f"{type(exc).__name__}: {message}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, jobs=args.jobs)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        return _fail(exc, 2)
    except _DATA_ERRORS as exc:
        return _fail(exc, 3)
    except GatewayError as exc:
        return _fail(exc, 4)
    except Exception as exc:  # pragma: no cover - defensive
        return _fail(exc, 5)
    return 0


if __name__ == "__main__":
    sys.exit(main())
