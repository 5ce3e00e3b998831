# routers/train.py
import argparse
from pathlib import Path

from models import Ablation, CommandOutcome
from routers.common import add_common_flags, artifacts, require_file
from services import training_service
from services.training_service import HISTORY_NAME, VOCAB_NAME
from settings import load_config


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Config file plus the overrides shared by train and ablate."""
    parser.add_argument("--config", default=None, help="JSON config; keys are TrainConfig fields")
    parser.add_argument("--manifest", required=True, help="JSON-lines manifest")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None, help="overrides lr_base")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--n-classes", type=int, choices=[2, 3], default=None)


def config_from_args(args: argparse.Namespace, **extra):
    if args.config:
        require_file(args.config, "--config")
    return load_config(args.config, seed=args.seed, epochs=args.epochs, lr_base=args.lr,
                       batch_size=args.batch_size, n_classes=args.n_classes, **extra)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train ADPC on a manifest")
    add_config_flags(parser)
    parser.add_argument("--ablation", choices=list(Ablation.ALL), default=None)
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_train)


def cmd_train(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    manifest = require_file(args.manifest, "--manifest")
    config = config_from_args(args, ablation_flag=args.ablation)
    result = training_service.train(config, manifest, out_dir)
    return CommandOutcome(
        exit_code=0,
        message=f"best val ACC {result.best_val_acc:.4f} at epoch {result.best_epoch}; "
                f"checkpoint {result.checkpoint_path}",
        artifacts=artifacts(result.checkpoint_path, out_dir / HISTORY_NAME, out_dir / VOCAB_NAME),
    )
