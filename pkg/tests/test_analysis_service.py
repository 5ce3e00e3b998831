# tests/test_analysis_service.py
import numpy as np
import pandas as pd
import pytest

from models import Ablation, ExportStage, SaliencyTable, SynthSpec, Vocabulary
from services import analysis_service, training_service
from services.checkpoint_service import load_checkpoint
from services.data_service import load_manifest, synth_dataset
from services.text_service import read_summary, tokenize
from settings import TrainConfig
from utils.constants import PAD_ID, SPECIAL_TOKENS
from utils.exceptions import ClassAbsent, ConfigError


# --- RANKING ---

def test_ranking_breaks_ties_by_token_id():
    vocab = Vocabulary(tokens=SPECIAL_TOKENS + ("memory",))
    table = SaliencyTable(scores=np.array([0.0, 1.0, 0.5, 1.0, 0.5]), class_name="AD", n_samples=1,
                          checkpoint_digest="")
    ranking = analysis_service.ranking_report(table, vocab, top_k=4)
    assert list(ranking["token"]) == ["<unk>", "<eos>", "<bos>", "memory"]
    assert list(ranking["rank"]) == [1, 2, 3, 4]


def test_ranking_validates_sizes():
    vocab = Vocabulary(tokens=SPECIAL_TOKENS)
    table = SaliencyTable(scores=np.ones(3), class_name="CN", n_samples=1, checkpoint_digest="")
    with pytest.raises(ValueError):
        analysis_service.ranking_report(table, vocab)


# --- SALIENCY ---

def test_saliency_scores_only_tokens_the_class_uses(trained_run):
    manifest, checkpoint = trained_run
    table = analysis_service.embedding_saliency(checkpoint, manifest, "CN", n_samples=5)
    assert table.n_samples == 5
    assert table.scores.max() == pytest.approx(1.0)
    assert np.all(table.scores >= 0)

    loaded = load_checkpoint(checkpoint)
    members = [r for r in load_manifest(manifest) if r.label == "CN"][:5]
    used = set()
    for r in members:
        seq = tokenize(read_summary(r.summary), loaded.vocab, loaded.config.max_len)
        used.update(i for i, real in zip(seq.ids, seq.attention_mask) if real)
    unused = sorted(set(range(len(loaded.vocab))) - used)
    assert unused
    assert np.all(table.scores[unused] == 0.0)
    assert table.scores[PAD_ID] == 0.0


def test_saliency_is_repeatable(trained_run):
    manifest, checkpoint = trained_run
    first = analysis_service.embedding_saliency(checkpoint, manifest, "AD", n_samples=3)
    second = analysis_service.embedding_saliency(checkpoint, manifest, "AD", n_samples=3)
    assert np.array_equal(first.scores, second.scores)
    assert first.checkpoint_digest == load_checkpoint(checkpoint).digest_hex


def test_saliency_for_unknown_class(trained_run):
    manifest, checkpoint = trained_run
    with pytest.raises(ClassAbsent):
        analysis_service.embedding_saliency(checkpoint, manifest, "FTD")


# --- FEATURE EXPORT ---

@pytest.mark.parametrize("stage", ExportStage.ALL)
def test_export_one_row_per_record(trained_run, tmp_path, stage):
    manifest, checkpoint = trained_run
    path = analysis_service.export_features(checkpoint, manifest, stage, tmp_path / f"{stage}.csv")
    frame = pd.read_csv(path)
    assert len(frame) == 30
    assert list(frame.columns[:3]) == ["id", "label", "f0"]
    assert frame.shape[1] == 2 + load_checkpoint(checkpoint).config.d_model
    assert frame["id"].iloc[0] == "CN_0000"


def test_post_fda_export_needs_the_full_model(tmp_path, tiny_manifest, tiny_config):
    config = tiny_config.with_overrides(ablation_flag=Ablation.NO_CF_FDA, epochs=1)
    result = training_service.train(config, tiny_manifest, tmp_path / "run")
    with pytest.raises(ConfigError):
        analysis_service.export_features(result.checkpoint_path, tiny_manifest, ExportStage.POST_FDA_POOLED,
                                         tmp_path / "f.csv")
    analysis_service.export_features(result.checkpoint_path, tiny_manifest, ExportStage.MULTIMODAL_POOLED,
                                     tmp_path / "f.csv")


# --- PLANTED SIGNAL ---

@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_planted_token_ranks_first(tmp_path, seed):
    spec = SynthSpec(counts=(40, 40, 40), volume_dims=(16, 16, 16), keyword_signal=False, volume_signal=False,
                     planted_token="hallmark", planted_label="AD")
    manifest = synth_dataset(spec, tmp_path / "data", seed=seed)
    config = TrainConfig(d_model=32, n_heads=4, encoder_depths=(1, 1, 1), volume_dims=(16, 16, 16),
                         epochs=20, lr_base=1e-3, dropout=0.0, seed=seed)
    result = training_service.train(config, manifest, tmp_path / "run")

    table = analysis_service.embedding_saliency(result.checkpoint_path, manifest, "AD", n_samples=25)
    ranking = analysis_service.ranking_report(table, load_checkpoint(result.checkpoint_path).vocab, top_k=1)
    assert ranking["token"].iloc[0] == "hallmark"
