# routers/features.py
import argparse
from pathlib import Path

from models import CommandOutcome, ExportStage
from routers.common import add_common_flags, artifacts, require_file
from services import analysis_service


def register(subparsers) -> None:
    parser = subparsers.add_parser("export-features", help="write pooled features per sample for external plotting")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--stage", choices=list(ExportStage.ALL), default=ExportStage.POST_FDA_POOLED)
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_export_features)


def cmd_export_features(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    checkpoint = require_file(args.checkpoint, "--checkpoint")
    manifest = require_file(args.manifest, "--manifest")
    path = analysis_service.export_features(checkpoint, manifest, args.stage, out_dir / f"features_{args.stage}.csv")
    return CommandOutcome(exit_code=0, message=f"features written to {path}", artifacts=artifacts(path))
