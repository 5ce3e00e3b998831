# routers/common.py
import argparse
import time
from pathlib import Path
from typing import Callable, List, Optional

import pandas as pd

import settings
from models import CommandOutcome
from utils.exceptions import AdpcError, UsageError
from utils.logger import attach_run_logs, detach_run_logs, setup_logger

logger = setup_logger("cli")

Handler = Callable[[argparse.Namespace, Path], CommandOutcome]


def add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="seed for every stochastic step")
    parser.add_argument("--out-dir", default=None,
                        help=f"output directory (default: $ADPC_OUT_DIR or {settings.ADPC_OUT_DIR})")
    parser.add_argument("--version", action="version", version=f"{settings.APP_NAME} {settings.APP_VERSION}")


def require_file(path: Optional[str], flag: str) -> Path:
    """Flag-level existence check so usage problems surface before any work starts."""
    if not path:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: file not found: {path}")
    return p


def _call(handler: Handler, args: argparse.Namespace, out_dir: Path) -> CommandOutcome:
    try:
        return handler(args, out_dir)
    except AdpcError as e:
        logger.error(f"Command {args.command} failed: {e}", exc_info=True)
        return CommandOutcome(exit_code=e.exit_code, message=f"error: {e}")
    except Exception as e:
        logger.error(f"Command {args.command} crashed", exc_info=True)
        return CommandOutcome(exit_code=2, message=f"runtime error: {e}")


def run(handler: Handler, args: argparse.Namespace) -> CommandOutcome:
    """Resolve the out-dir, attach run logs, call the handler and turn failures into exit codes."""
    out_dir = settings.resolve_out_dir(args.out_dir)
    attach_run_logs(out_dir)
    start_time = time.time()
    logger.info(f"Command: {args.command} (out_dir={out_dir})")

    try:
        outcome = _call(handler, args, out_dir)
        logger.info(f"Command: {args.command} exit={outcome.exit_code} Time: {time.time() - start_time:.3f}s")
        return outcome
    finally:
        # run logs belong to this command only
        detach_run_logs()


def table_text(frame: pd.DataFrame, float_format: str = "{:.6g}") -> str:
    return frame.to_string(index=False, float_format=float_format.format)


def artifacts(*paths) -> List[str]:
    return [str(p) for p in paths]
