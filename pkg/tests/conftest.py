# tests/conftest.py
import pytest
import torch

from models import SynthSpec
from services.data_service import synth_dataset
from settings import TrainConfig
from utils.logger import detach_run_logs

torch.set_default_dtype(torch.float64)


TINY = dict(
    d_model=8,
    n_heads=2,
    encoder_depths=(1, 1, 1),
    volume_dims=(8, 8, 8),
    patch_size=4,
    max_len=64,
    batch_size=8,
    epochs=2,
    dropout=0.0,
    seeds=(0,),
)


@pytest.fixture
def tiny_config() -> TrainConfig:
    return TrainConfig(**TINY)


@pytest.fixture
def tiny_spec() -> SynthSpec:
    return SynthSpec(counts=(10, 10, 10), volume_dims=(8, 8, 8))


@pytest.fixture
def tiny_manifest(tmp_path, tiny_spec):
    return synth_dataset(tiny_spec, tmp_path / "data", seed=0)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """(manifest, checkpoint) of a short full-model run, shared by a test module."""
    from services.training_service import train

    root = tmp_path_factory.mktemp("trained")
    manifest = synth_dataset(SynthSpec(counts=(10, 10, 10), volume_dims=(8, 8, 8)), root / "data", seed=0)
    result = train(TrainConfig(**TINY), manifest, root / "run")
    return manifest, result.checkpoint_path


@pytest.fixture(autouse=True)
def _close_run_logs():
    yield
    detach_run_logs()
