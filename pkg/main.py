# main.py
import argparse
import sys
import time
from typing import List, Optional

import settings
from routers import ablate, evaluate, features, saliency, scm, synth, train
from routers.common import run
from utils.logger import setup_logger

logger = setup_logger("main")

COMMANDS = (synth, train, evaluate, ablate, scm, saliency, features)


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with 1 (validation error), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> CliParser:
    parser = CliParser(
        prog=settings.APP_NAME,
        description="Cross-modal causal fusion with front-door adjustment for CN/MCI/AD classification",
    )
    parser.add_argument("--version", action="version", version=f"{settings.APP_NAME} {settings.APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    start_time = time.time()

    outcome = run(args.handler, args)
    stream = sys.stdout if outcome.ok else sys.stderr
    print(outcome.message, file=stream)
    for path in outcome.artifacts:
        print(f"  -> {path}", file=stream)

    logger.debug(f"Finished {args.command} in {time.time() - start_time:.3f}s")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
