# services/analysis_service.py
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import torch

from models import ExportStage, SaliencyTable, Vocabulary
from network.frontdoor import masked_mean
from services.checkpoint_service import load_checkpoint
from services.data_service import ManifestDataset, load_manifest, make_loader, to_device
from utils.exceptions import ClassAbsent, ConfigError
from utils.logger import setup_logger

logger = setup_logger("analysis")


# --- SALIENCY ---

def embedding_saliency(checkpoint, manifest, class_name: str, n_samples: int = 25) -> SaliencyTable:
    """
    Mean per-row L2 norm of d(true-class logit)/d(embedding table) over the first
    n_samples records of the class, scaled so the largest score is 1.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    loaded = load_checkpoint(checkpoint)
    config, model = loaded.config, loaded.model
    if class_name not in config.class_names:
        raise ClassAbsent(f"'{class_name}' is not a class of this {config.n_classes}-class model")

    records = load_manifest(manifest, config.class_names, config.label_filter)
    members = [r for r in records if r.label == class_name][:n_samples]
    if not members:
        raise ClassAbsent(f"No samples of class '{class_name}' in {manifest}")

    model.eval()
    table = model.text_encoder.token_embedding.weight
    dataset = ManifestDataset(members, loaded.vocab, config)
    target = config.class_names.index(class_name)
    total = torch.zeros(table.shape[0], dtype=torch.float64)

    for i in range(len(dataset)):
        item = to_device(dataset[i])
        model.zero_grad(set_to_none=True)
        logits = model(item["visual"][None], item["token_ids"][None], item["attention_mask"][None])
        logits[0, target].backward()
        total += table.grad.detach().double().norm(dim=1).cpu()

    scores = (total / len(dataset)).numpy()
    peak = scores.max()
    if peak > 0:
        scores = scores / peak
    logger.info(f"Saliency for {class_name}: {len(dataset)} samples, "
                f"{int((scores > 0).sum())} tokens with non-zero score")
    return SaliencyTable(scores=scores, class_name=class_name, n_samples=len(dataset),
                         checkpoint_digest=loaded.digest_hex)


def ranking_report(table: SaliencyTable, vocab: Vocabulary, top_k: int = 5) -> pd.DataFrame:
    """Top-k tokens by score, descending; ties go to the lower token id."""
    if len(table.scores) != len(vocab):
        raise ValueError(f"Score vector has {len(table.scores)} entries, vocabulary has {len(vocab)}")
    if not 1 <= top_k <= len(vocab):
        raise ValueError(f"top_k must lie in [1, {len(vocab)}]")
    ids = np.arange(len(vocab))
    order = np.lexsort((ids, -table.scores))[:top_k]
    return pd.DataFrame({
        "rank": np.arange(1, top_k + 1),
        "token": [vocab.tokens[i] for i in order],
        "score": table.scores[order],
    })


# --- FEATURE EXPORT ---

@torch.no_grad()
def export_features(checkpoint, manifest, stage: str, path, batch_size: Optional[int] = None) -> Path:
    """One CSV row per manifest record: id, label, f0..f{d-1} of the pooled stage output."""
    if stage not in ExportStage.ALL:
        raise ConfigError(f"stage must be one of {ExportStage.ALL}")
    loaded = load_checkpoint(checkpoint)
    config, model = loaded.config, loaded.model
    if stage == ExportStage.POST_FDA_POOLED and model.fda is None:
        raise ConfigError("post_fda_pooled is not available for a model trained without CF and FDA")

    records = load_manifest(manifest, config.class_names, config.label_filter)
    dataset = ManifestDataset(records, loaded.vocab, config)
    key = "f_out" if stage == ExportStage.POST_FDA_POOLED else "f_mm"

    model.eval()
    pooled = []
    for batch in map(to_device, make_loader(dataset, batch_size or config.batch_size, shuffle=False)):
        stages = model.forward_stages(batch["visual"], batch["token_ids"], batch["attention_mask"])
        pooled.append(masked_mean(stages[key], stages["mask"]).double().cpu().numpy())
    features = np.concatenate(pooled)

    frame = pd.DataFrame(features, columns=[f"f{j}" for j in range(features.shape[1])])
    frame.insert(0, "label", [r.label for r in records])
    frame.insert(0, "id", [r.id for r in records])

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Exported {len(frame)} {stage} feature rows ({features.shape[1]} dims) to {path}")
    return path
