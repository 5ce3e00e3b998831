# services/checkpoint_service.py
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import torch

import settings
from models import Vocabulary
from network.frontdoor import ADPCModel
from settings import TrainConfig, config_digest
from utils.exceptions import CheckpointMismatch, MissingFile
from utils.logger import setup_logger

logger = setup_logger("checkpoint")

MAGIC = b"ADPCCKPT"
VERSION = 1
DIGEST_SIZE = 32
HEADER_SIZE = len(MAGIC) + 2 + DIGEST_SIZE


@dataclass
class LoadedCheckpoint:
    model: ADPCModel
    config: TrainConfig
    vocab: Vocabulary
    digest: bytes
    epoch: int

    @property
    def digest_hex(self) -> str:
        return self.digest.hex()


def save_checkpoint(path, model: ADPCModel, config: TrainConfig, vocab: Vocabulary, epoch: int = 0) -> Path:
    """Header (magic, version, config digest) then a torch-serialized named tensor table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": config.to_dict(),
        "vocab": list(vocab.tokens),
        "epoch": epoch,
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(VERSION.to_bytes(2, "little"))
        f.write(config_digest(config))
        f.write(buffer.getvalue())
    logger.info(f"Checkpoint saved: {path} (epoch {epoch})")
    return path


def read_header(path) -> Tuple[int, bytes, bytes]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointMismatch(f"{path} is not an ADPC checkpoint")
    version = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 2], "little")
    digest = raw[len(MAGIC) + 2:HEADER_SIZE]
    return version, digest, raw[HEADER_SIZE:]


def load_checkpoint(path, expected: Optional[TrainConfig] = None) -> LoadedCheckpoint:
    version, digest, body = read_header(path)
    if version != VERSION:
        raise CheckpointMismatch(f"{path}: checkpoint version {version}, this build reads {VERSION}")

    payload = torch.load(io.BytesIO(body), map_location=settings.DEVICE, weights_only=True)
    config = TrainConfig.from_dict(payload["config"])
    if config_digest(config) != digest:
        raise CheckpointMismatch(f"{path}: stored config does not match the header digest")
    if expected is not None and config_digest(expected) != digest:
        raise CheckpointMismatch(f"{path} was trained with a different config")

    vocab = Vocabulary(tokens=tuple(payload["vocab"]))
    model = ADPCModel(config, len(vocab)).to(dtype=getattr(torch, config.dtype), device=settings.DEVICE)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    logger.debug(f"Checkpoint loaded: {path} digest={digest.hex()[:12]}")
    return LoadedCheckpoint(model=model, config=config, vocab=vocab, digest=digest,
                            epoch=int(payload.get("epoch", 0)))
