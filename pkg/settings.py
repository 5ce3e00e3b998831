# settings.py
import hashlib
import json
import os
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from models import Ablation, FdaValues, VisualSource
from utils.constants import CLASS_NAMES_2, CLASS_NAMES_3
from utils.exceptions import ConfigError
from utils.logger import setup_logger

logger = setup_logger("settings")

# --- 1. ENVIRONMENT ---
load_dotenv()

APP_NAME = "adpc"
APP_VERSION = "1.0.0"

ADPC_OUT_DIR = os.getenv("ADPC_OUT_DIR", "./adpc_out")
STATE_SPACE_LIMIT = int(os.getenv("ADPC_STATE_SPACE_LIMIT", "1000000"))
DEVICE = os.getenv("ADPC_DEVICE", "cpu")
NUM_WORKERS = int(os.getenv("ADPC_NUM_WORKERS", "0"))

logger.debug(f"Settings - out_dir: {ADPC_OUT_DIR}, state_space_limit: {STATE_SPACE_LIMIT}, "
             f"device: {DEVICE}, workers: {NUM_WORKERS}")


# --- 2. TRAINING CONFIGURATION ---

@dataclass(frozen=True)
class TrainConfig:
    lr_base: float = 5e-4
    batch_size: int = 16
    epochs: int = 30
    warmup_ratio: float = 0.1
    weight_decay: float = 0.1
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    n_classes: int = 3
    label_filter: bool = False
    d_model: int = 64
    n_heads: int = 4
    dropout: float = 0.1
    encoder_depths: Tuple[int, int, int] = (6, 6, 4)  # visual, textual, multi-modal
    ablation_flag: str = Ablation.NONE
    fda_eq8_values: str = FdaValues.F
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_len: int = 128
    vocab_min_freq: int = 1
    vocab_cap: int = 2048
    patch_size: int = 8
    volume_dims: Tuple[int, int, int] = (32, 32, 32)
    foreground_threshold: float = 0.0
    visual_source: str = VisualSource.VOLUME
    feature_tokens: int = 64
    feature_dim: int = 64
    classifier_zero_init: bool = True
    dtype: str = "float64"
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        # JSON gives lists; keep tuples so the config stays hashable and digest-stable
        for name in ("betas", "encoder_depths", "split_fractions", "volume_dims", "seeds"):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))
        self.validate()

    # --- Validation ---
    def validate(self) -> None:
        problems: List[str] = []
        if self.lr_base < 0:
            problems.append("lr_base must be >= 0")
        for name in ("batch_size", "epochs", "d_model", "n_heads", "max_len", "vocab_cap", "patch_size",
                     "feature_tokens", "feature_dim"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            problems.append("warmup_ratio must lie in [0, 1)")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.n_classes not in (2, 3):
            problems.append("n_classes must be 2 or 3")
        if self.d_model % max(self.n_heads, 1) != 0:
            problems.append("d_model must be divisible by n_heads")
        if len(self.encoder_depths) != 3 or min(self.encoder_depths) < 1:
            problems.append("encoder_depths needs three depths >= 1")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9 \
                or min(self.split_fractions) < 0:
            problems.append("split_fractions must be three non-negative numbers summing to 1")
        if self.max_len < 2:
            problems.append("max_len must be >= 2")
        if self.vocab_cap < 4:
            problems.append("vocab_cap must leave room for the four special tokens")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if self.ablation_flag not in Ablation.ALL:
            problems.append(f"ablation_flag must be one of {Ablation.ALL}")
        if self.fda_eq8_values not in FdaValues.ALL:
            problems.append(f"fda_eq8_values must be one of {FdaValues.ALL}")
        if self.visual_source not in VisualSource.ALL:
            problems.append(f"visual_source must be one of {VisualSource.ALL}")
        if self.dtype not in ("float32", "float64"):
            problems.append("dtype must be float32 or float64")
        if len(self.volume_dims) != 3 or any(d % self.patch_size for d in self.volume_dims):
            problems.append("volume_dims must be three sizes divisible by patch_size")
        if not self.seeds:
            problems.append("seeds must not be empty")
        if problems:
            raise ConfigError("; ".join(problems))

    # --- Derived ---
    @property
    def class_names(self) -> Tuple[str, ...]:
        return CLASS_NAMES_3 if self.n_classes == 3 else CLASS_NAMES_2

    @property
    def n_visual_tokens(self) -> int:
        if self.visual_source == VisualSource.FEATURES:
            return self.feature_tokens
        z, y, x = self.volume_dims
        p = self.patch_size
        return (z // p) * (y // p) * (x // p)

    # --- Loading ---
    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        logger.info(f"Loaded config from {path}")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "TrainConfig":
        """Apply CLI overrides; None values mean 'flag not given'."""
        given = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **given) if given else self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def config_digest(config: TrainConfig) -> bytes:
    """SHA-256 of the canonical JSON form of the config."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def load_config(path: Optional[str] = None, **overrides) -> TrainConfig:
    config = TrainConfig.from_file(path) if path else TrainConfig()
    return config.with_overrides(**overrides)


def resolve_out_dir(out_dir: Optional[str] = None) -> Path:
    path = Path(out_dir or ADPC_OUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path
