# services/training_service.py
import json
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from tqdm import tqdm

import settings
from models import Ablation, AblationReport, MetricsReport, Split, TrainResult
from network.frontdoor import ADPCModel
from services.checkpoint_service import load_checkpoint, save_checkpoint
from services.data_service import (
    ManifestDataset, assign_splits, load_manifest, make_loader, select_split, to_device, vocab_from_records,
)
from services.metrics_service import compute_metrics
from services.optim_service import build_optimizer, cosine_lr
from services.text_service import save_vocab
from settings import TrainConfig
from utils.exceptions import CheckpointMismatch, NonFiniteLoss, ParseError
from utils.logger import setup_logger

logger = setup_logger("training")

CHECKPOINT_NAME = "best.ckpt"
HISTORY_NAME = "history.csv"
VOCAB_NAME = "vocab.txt"
HISTORY_COLUMNS = ["epoch", "loss", "acc", "f1", "precision", "recall", "auc", "lr"]


# --- HELPERS ---

def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed)


def build_model(config: TrainConfig, vocab_size: int) -> ADPCModel:
    """Initialization draws from the torch stream seeded with config.seed."""
    torch.manual_seed(config.seed)
    return ADPCModel(config, vocab_size).to(dtype=getattr(torch, config.dtype), device=settings.DEVICE)


@torch.no_grad()
def predict(model: ADPCModel, dataset: ManifestDataset, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Softmax probabilities and integer labels, in dataset order."""
    model.eval()
    probs, labels = [], []
    for batch in map(to_device, make_loader(dataset, batch_size, shuffle=False)):
        logits = model(batch["visual"], batch["token_ids"], batch["attention_mask"])
        probs.append(torch.softmax(logits.double(), dim=-1).cpu().numpy())
        labels.append(batch["label"].cpu().numpy())
    return np.concatenate(probs), np.concatenate(labels)


# --- TRAIN ---

def train(config: TrainConfig, manifest, out_dir) -> TrainResult:
    """
    Minibatch cross-entropy with AdamW and warmup-cosine LR. Validation ACC is
    measured after every epoch and the best epoch's weights are checkpointed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)

    records = load_manifest(manifest, config.class_names, config.label_filter)
    splits = assign_splits(records, config.class_names, config.split_fractions, config.seed)
    train_records = splits[Split.TRAIN]
    val_records = splits[Split.VAL]
    if not train_records:
        raise ParseError("The train split is empty")
    if not val_records:
        logger.warning("Validation split is empty; selecting checkpoints on the train split")
        val_records = train_records

    vocab = vocab_from_records(train_records, config)
    save_vocab(vocab, out_dir / VOCAB_NAME)
    train_set = ManifestDataset(train_records, vocab, config)
    val_set = ManifestDataset(val_records, vocab, config)

    model = build_model(config, len(vocab))
    optimizer = build_optimizer(model, config)
    loader = make_loader(train_set, config.batch_size, shuffle=True, seed=config.seed)
    total_steps = config.epochs * len(loader)

    logger.info(f"Training: {len(train_set)} train / {len(val_set)} val samples, "
                f"{model.n_parameters} parameters, ablation={config.ablation_flag}, {total_steps} steps")

    checkpoint_path = out_dir / CHECKPOINT_NAME
    history: List[Dict] = []
    best_acc, best_epoch, step = -1.0, 0, 0
    start = time.time()

    for epoch in tqdm(range(1, config.epochs + 1), desc="epochs", leave=False):
        model.train()
        loss_sum, seen, lr = 0.0, 0, 0.0
        for batch in map(to_device, loader):
            step += 1
            lr = cosine_lr(step, total_steps, config)
            logits = model(batch["visual"], batch["token_ids"], batch["attention_mask"])
            loss = F.cross_entropy(logits, batch["label"])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"Loss became {loss.item()} at epoch {epoch}, step {step} (lr={lr:.3e})")

            optimizer.zero_grad()
            loss.backward()
            optimizer.set_lr(lr)
            optimizer.step()

            n = batch["label"].shape[0]
            loss_sum += loss.item() * n
            seen += n

        probs, labels = predict(model, val_set, config.batch_size)
        report = compute_metrics(labels, probs, config.class_names)
        row = {"epoch": epoch, "loss": loss_sum / max(seen, 1), **report.as_row(), "lr": lr}
        history.append(row)
        logger.debug(f"Epoch {epoch}: loss={row['loss']:.4f} val_acc={report.acc:.4f} lr={lr:.3e}")

        if report.acc > best_acc:
            best_acc, best_epoch = report.acc, epoch
            save_checkpoint(checkpoint_path, model, config, vocab, epoch)

    history_df = pd.DataFrame(history, columns=HISTORY_COLUMNS)
    history_df.to_csv(out_dir / HISTORY_NAME, index=False)
    logger.info(f"Training finished in {time.time() - start:.1f}s: best val ACC {best_acc:.4f} "
                f"at epoch {best_epoch}")
    return TrainResult(checkpoint_path=str(checkpoint_path), history=history_df, best_val_acc=best_acc,
                       best_epoch=best_epoch, n_parameters=model.n_parameters)


# --- EVALUATE ---

def evaluate(checkpoint, manifest, split: str = Split.TEST, n_classes: Optional[int] = None) -> MetricsReport:
    """Rebuilds the training split from the checkpoint's config and scores one split of it."""
    loaded = load_checkpoint(checkpoint)
    config = loaded.config
    if n_classes is not None and n_classes != config.n_classes:
        raise CheckpointMismatch(f"Checkpoint is a {config.n_classes}-class model, {n_classes} requested")

    records = load_manifest(manifest, config.class_names, config.label_filter)
    splits = assign_splits(records, config.class_names, config.split_fractions, config.seed)
    selected = select_split(splits, split)
    if not selected:
        raise ParseError(f"Split '{split}' is empty")

    dataset = ManifestDataset(selected, loaded.vocab, config)
    probs, labels = predict(loaded.model, dataset, config.batch_size)
    report = compute_metrics(labels, probs, config.class_names)
    logger.info(f"Evaluated {checkpoint} on {split} ({report.n_samples} samples): ACC={report.acc:.4f}")
    return report


def write_report(report: MetricsReport, out_dir, stem: str = "metrics") -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    csv_path = out_dir / f"{stem}_per_class.csv"
    report.per_class.to_csv(csv_path)
    return [json_path, csv_path]


# --- ABLATION ---

ABLATION_SPLITS = {Split.VAL: "in_distribution", Split.TEST: "ood"}
METRIC_COLUMNS = ["acc", "f1", "precision", "recall", "auc"]


def ablation_deltas(runs: pd.DataFrame) -> pd.DataFrame:
    """Full minus ablated, averaged over seeds, one row per evaluation split."""
    means = runs.groupby(["split", "arm"])[METRIC_COLUMNS].mean()
    full = means.xs(Ablation.NONE, level="arm")
    ablated = means.xs(Ablation.NO_CF_FDA, level="arm")
    return full.sub(ablated)


def run_ablation(config: TrainConfig, manifest, out_dir, seeds: Optional[Sequence[int]] = None) -> AblationReport:
    """Train both arms per seed on identical data; score val (in-distribution) and test (OOD)."""
    out_dir = Path(out_dir)
    seeds = tuple(seeds) if seeds is not None else config.seeds
    rows: List[Dict] = []
    parameter_counts: Dict[str, int] = {}

    for seed in seeds:
        for arm in Ablation.ALL:
            arm_config = replace(config, seed=seed, ablation_flag=arm)
            result = train(arm_config, manifest, out_dir / f"seed_{seed}" / arm)
            parameter_counts[arm] = result.n_parameters
            for split, tag in ABLATION_SPLITS.items():
                report = evaluate(result.checkpoint_path, manifest, split)
                rows.append({"seed": seed, "arm": arm, "split": tag, **report.as_row(),
                             "n_samples": report.n_samples, "n_parameters": result.n_parameters})
            logger.info(f"Ablation seed {seed} arm {arm} done")

    runs = pd.DataFrame(rows)
    runs["auc"] = runs["auc"].astype(float)
    deltas = ablation_deltas(runs)
    runs.to_csv(out_dir / "ablation.csv", index=False)
    deltas.to_csv(out_dir / "ablation_deltas.csv")
    logger.info(f"Ablation finished over seeds {list(seeds)}; OOD delta ACC "
                f"{deltas.loc['ood', 'acc'] if 'ood' in deltas.index else float('nan'):.4f}")
    return AblationReport(runs=runs, deltas=deltas, parameter_counts=parameter_counts)
