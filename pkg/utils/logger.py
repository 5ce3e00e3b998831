import logging
import sys
from pathlib import Path
from datetime import datetime
import os

ROOT_LOGGER_NAME = "adpc"

DETAILED_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
SIMPLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def _root_logger() -> logging.Logger:
    root = logging.getLogger(ROOT_LOGGER_NAME)
    root.setLevel(logging.DEBUG)  # Handlers decide what is shown

    if root.handlers:
        return root

    # Console handler - respects LOG_LEVEL
    log_level = getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO)
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter(SIMPLE_FORMAT, datefmt='%H:%M:%S'))
    root.addHandler(console_handler)
    return root


def setup_logger(name: str, level: str = None) -> logging.Logger:
    """
    Get a logger under the shared 'adpc' namespace.
    Console output is configured once on the namespace root; file handlers are
    added per run by attach_run_logs.
    """
    _root_logger()
    logger = logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")
    if level:
        logger.setLevel(getattr(logging, level.upper()))
    return logger


def attach_run_logs(out_dir) -> Path:
    """Add the detailed and error log files under <out_dir>/logs. Returns the log directory."""
    root = _root_logger()
    log_dir = Path(out_dir) / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)

    stamp = datetime.now().strftime('%Y%m%d')
    detailed_formatter = logging.Formatter(DETAILED_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')
    wanted = {
        log_dir / f"adpc_{stamp}.log": logging.DEBUG,
        log_dir / f"adpc_errors_{stamp}.log": logging.ERROR,
    }

    # Prevent duplicate handlers when several commands run in one process
    existing = {Path(h.baseFilename) for h in root.handlers if isinstance(h, logging.FileHandler)}
    for path, level in wanted.items():
        if path.resolve() in existing:
            continue
        handler = logging.FileHandler(path, encoding='utf-8')
        handler.setLevel(level)
        handler.setFormatter(detailed_formatter)
        root.addHandler(handler)

    return log_dir


def detach_run_logs() -> None:
    """Close and remove file handlers (used between CLI invocations inside one process)."""
    root = logging.getLogger(ROOT_LOGGER_NAME)
    for handler in list(root.handlers):
        if isinstance(handler, logging.FileHandler):
            handler.close()
            root.removeHandler(handler)
