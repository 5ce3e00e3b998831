# routers/synth.py
import argparse
from pathlib import Path

from models import CommandOutcome, SynthSpec
from routers.common import add_common_flags, artifacts
from services import data_service
from utils.constants import CLASS_NAMES_3, DEFAULT_CONFOUND_TOKEN


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth-data", help="write a synthetic CN/MCI/AD benchmark")
    parser.add_argument("--counts", type=int, nargs="+", default=[100, 100, 100], help="samples per class")
    parser.add_argument("--classes", nargs="+", default=list(CLASS_NAMES_3))
    parser.add_argument("--dims", type=int, nargs=3, default=[32, 32, 32], metavar=("Z", "Y", "X"))
    parser.add_argument("--noise", type=float, default=0.1)
    parser.add_argument("--rho-train", type=float, default=None, help="confounder/label agreement in train and val")
    parser.add_argument("--rho-test", type=float, default=None, help="confounder/label agreement in test")
    parser.add_argument("--confound-label", default="AD")
    parser.add_argument("--confound-token", default=DEFAULT_CONFOUND_TOKEN)
    parser.add_argument("--planted-token", default=None, help="token written only into one class's summaries")
    parser.add_argument("--planted-label", default="AD")
    parser.add_argument("--no-keywords", action="store_true", help="drop class keywords from summaries")
    parser.add_argument("--no-volume-signal", action="store_true", help="same blob for every class")
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_synth_data)


def cmd_synth_data(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    spec = SynthSpec(
        counts=tuple(args.counts),
        class_names=tuple(args.classes),
        volume_dims=tuple(args.dims),
        noise=args.noise,
        volume_signal=not args.no_volume_signal,
        keyword_signal=not args.no_keywords,
        rho_train=args.rho_train,
        rho_test=args.rho_test,
        confound_label=args.confound_label,
        confound_token=args.confound_token,
        planted_token=args.planted_token,
        planted_label=args.planted_label,
    )
    manifest = data_service.synth_dataset(spec, out_dir, seed=args.seed or 0)
    return CommandOutcome(exit_code=0, message=f"wrote {sum(spec.counts)} samples, manifest {manifest}",
                          artifacts=artifacts(manifest))
