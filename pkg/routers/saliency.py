# routers/saliency.py
import argparse
from pathlib import Path

from models import CommandOutcome
from routers.common import add_common_flags, artifacts, require_file, table_text
from services import analysis_service
from services.checkpoint_service import load_checkpoint


def register(subparsers) -> None:
    parser = subparsers.add_parser("saliency", help="rank vocabulary tokens by embedding-gradient norm for a class")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--class", dest="class_name", required=True)
    parser.add_argument("--n-samples", type=int, default=25)
    parser.add_argument("--top-k", type=int, default=5)
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_saliency)


def cmd_saliency(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    checkpoint = require_file(args.checkpoint, "--checkpoint")
    manifest = require_file(args.manifest, "--manifest")
    table = analysis_service.embedding_saliency(checkpoint, manifest, args.class_name, args.n_samples)
    vocab = load_checkpoint(checkpoint).vocab
    ranking = analysis_service.ranking_report(table, vocab, args.top_k)

    path = out_dir / f"saliency_{args.class_name}.csv"
    ranking.to_csv(path, index=False)
    print(table_text(ranking))
    return CommandOutcome(exit_code=0,
                          message=f"{args.class_name}: top token '{ranking.iloc[0]['token']}' "
                                  f"over {table.n_samples} samples",
                          artifacts=artifacts(path))
