import argparse
import logging
import sys
from typing import List, Optional

from ntg import config
from ntg.commands import COMMANDS
from ntg.errors import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, NtgError
from ntg.monitoring import capture_failure, init_sentry

logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; our exit code for that is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=default(0), help="64-bit seed for every random choice (default: 0)")
    parser.add_argument(
        "--threads",
        type=int,
        default=default(None),
        help="worker threads for patch matching (default: NTG_THREADS, else all cores)",
    )
    parser.add_argument("--config", default=default(None), help="train config file of 'key = value' lines")
    parser.add_argument(
        "--log-level",
        default=default(config.LOG_LEVEL),
        help=f"logging level (default: NTG_LOG_LEVEL or INFO, currently {config.LOG_LEVEL})",
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="ntg",
        description="Multi-scale neural texture transfer: matching, swapping, synthesis, training and evaluation.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    _add_globals(parser, suppress=False)
    globals_parent = ArgumentParser(add_help=False)
    _add_globals(globals_parent, suppress=True)

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=ArgumentParser)
    subparsers.required = True
    for command in COMMANDS:
        sub = command.register(subparsers, globals_parent)
        sub.set_defaults(handler=command.run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        format=config.LOG_FORMAT,
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        stream=sys.stderr,
    )
    init_sentry()

    try:
        config.set_threads(config.resolve_threads(args.threads))
        return args.handler(args) or EXIT_OK
    except NtgError as exc:
        if exc.exit_code == EXIT_NUMERIC:
            capture_failure(exc, args.command)
        else:
            logger.error("%s: %s", args.command, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s: %s", args.command, exc)
        return EXIT_DATA
    except Exception as exc:
        capture_failure(exc, args.command)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
