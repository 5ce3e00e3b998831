# routers/scm.py
import argparse
import json
from pathlib import Path

import numpy as np

from models import CommandOutcome
from routers.common import add_common_flags, artifacts, require_file, table_text
from services import scm_service
from utils.exceptions import UsageError, ZeroProbabilityEvidence
from utils.logger import setup_logger

logger = setup_logger("scm")


def register(subparsers) -> None:
    parser = subparsers.add_parser("scm-verify", help="check the front-door criterion and compare adjustments")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scm", help="SCM JSON file")
    source.add_argument("--example", choices=["frontdoor"], help="built-in example SCM")
    source.add_argument("--random", type=int, metavar="N", help="verify N random front-door/back-door SCMs")
    parser.add_argument("--cause", default="X")
    parser.add_argument("--target", default="Y")
    parser.add_argument("--mediator", default="M")
    parser.add_argument("--adjust", nargs="*", default=None,
                        help="back-door adjustment set (default: the parents of --cause)")
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_scm_verify)


def cmd_scm_verify(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    if args.random is not None:
        return verify_random(args, out_dir)

    if args.example:
        document = scm_service.example_frontdoor_document()
        scm = scm_service.scm_from_document(document)
        saved = out_dir / "example_frontdoor.json"
        saved.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    else:
        scm = scm_service.load_scm_file(require_file(args.scm, "--scm"))
        saved = None

    criterion = scm_service.check_frontdoor_criterion(scm, args.cause, args.target, [args.mediator])
    print(f"front-door criterion {args.cause} -> {args.target} via {args.mediator}: "
          f"(1)={criterion.intercepts_directed_paths} (2)={criterion.no_backdoor_cause_to_mediator} "
          f"(3)={criterion.mediator_backdoor_blocked_by_cause}")

    mediator = args.mediator if criterion.passed else None
    adjust_set = args.adjust
    if adjust_set is None:
        adjust_set = list(scm.parents[args.cause])
        logger.info(f"Back-door set defaults to the parents of {args.cause}: {adjust_set}")
    try:
        table = scm_service.compare_adjustments(scm, args.cause, args.target, mediator=mediator,
                                                adjust_set=adjust_set)
    except ZeroProbabilityEvidence:
        if args.adjust is not None:
            raise
        logger.warning(f"Back-door skipped: some configuration of {adjust_set} never co-occurs with {args.cause}")
        table = scm_service.compare_adjustments(scm, args.cause, args.target, mediator=mediator)
    print(table_text(table))
    path = out_dir / "scm_comparison.csv"
    table.to_csv(path, index=False)

    checked = table[~table["method"].isin(["oracle", "observational"])]
    worst = float(checked["max_abs_error_vs_oracle"].max()) if len(checked) else float("nan")
    if len(checked) and worst > scm_service.EQUALITY_TOL:
        return CommandOutcome(exit_code=2, message=f"adjustment disagrees with the oracle by {worst:.3e}",
                              artifacts=artifacts(path))
    message = f"criterion passed={criterion.passed}; worst adjustment error {worst:.3e}"
    return CommandOutcome(exit_code=0, message=message, artifacts=artifacts(*(p for p in (path, saved) if p)))


def verify_random(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    if args.random < 1:
        raise UsageError("--random needs N >= 1")
    report = scm_service.verify_random(args.random, seed=args.seed or 0)
    path = out_dir / "scm_random.csv"
    report.to_csv(path, index=False)
    worst = float(np.max(report[["frontdoor_max_abs_error", "backdoor_max_abs_error"]].to_numpy()))
    print(table_text(report.describe().loc[["mean", "max"]].reset_index()))
    exit_code = 0 if worst <= scm_service.EQUALITY_TOL else 2
    return CommandOutcome(exit_code=exit_code, message=f"{args.random} random SCMs, worst error {worst:.3e}",
                          artifacts=artifacts(path))
