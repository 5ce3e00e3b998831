# routers/ablate.py
import argparse
from pathlib import Path

from models import CommandOutcome
from routers.common import add_common_flags, artifacts, require_file
from routers.train import add_config_flags, config_from_args
from services import training_service


def register(subparsers) -> None:
    parser = subparsers.add_parser("ablate", help="full model vs. the model without CF and FDA, over seeds")
    add_config_flags(parser)
    parser.add_argument("--seeds", type=int, nargs="+", default=None,
                        help="seeds to run (default: --seed alone if given, else the config's seeds)")
    add_common_flags(parser)
    parser.set_defaults(handler=cmd_ablate)


def cmd_ablate(args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    manifest = require_file(args.manifest, "--manifest")
    config = config_from_args(args)
    seeds = args.seeds
    if seeds is None and args.seed is not None:
        seeds = [args.seed]
    report = training_service.run_ablation(config, manifest, out_dir, seeds=seeds)

    print(report.deltas.to_string(float_format="{:+.4f}".format))
    counts = ", ".join(f"{arm}={n}" for arm, n in report.parameter_counts.items())
    return CommandOutcome(exit_code=0, message=f"ablation over {report.runs['seed'].nunique()} seeds; "
                                               f"parameters {counts}",
                          artifacts=artifacts(out_dir / "ablation.csv", out_dir / "ablation_deltas.csv"))
