# routers/evaluate.py
import argparse
from pathlib import Path

import pandas as pd

from models import CommandOutcome, Split
from routers.common import add_common_flags, artifacts, require_file
from services import training_service
from services.metrics_service import format_report_table


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="score a checkpoint on one split of a manifest")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--split", choices=list(Split.ALL) + [Split.ALL_SPLITS], default=Split.TEST)
    parser.add_argument("--n-classes", type=int, choices=[2, 3], default=None)
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_evaluate)


def cmd_evaluate(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    checkpoint = require_file(args.checkpoint, "--checkpoint")
    manifest = require_file(args.manifest, "--manifest")
    report = training_service.evaluate(checkpoint, manifest, args.split, args.n_classes)
    written = training_service.write_report(report, out_dir, stem=f"metrics_{args.split}")

    table = format_report_table(pd.DataFrame([report.as_row()], index=pd.Index(["ADPC"], name="Method")))
    print(table)
    return CommandOutcome(exit_code=0, message=f"{args.split}: ACC {report.acc:.4f} over {report.n_samples} samples",
                          artifacts=artifacts(*written))
