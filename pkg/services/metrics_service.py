# services/metrics_service.py
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import (
    accuracy_score, confusion_matrix, precision_recall_fscore_support, roc_auc_score,
)

from models import MetricsReport
from utils.exceptions import ClassAbsentInSplit
from utils.logger import setup_logger

logger = setup_logger("metrics")


def binary_auc(y_true: Sequence[int], scores: Sequence[float]) -> float:
    """Rank AUC of the positive class (label 1); tied scores count 1/2."""
    y_true = np.asarray(y_true)
    if len(np.unique(y_true)) < 2:
        raise ClassAbsentInSplit("Binary AUC needs both classes present")
    return float(roc_auc_score(y_true, np.asarray(scores)))


def multiclass_auc(y_true: Sequence[int], probs: np.ndarray) -> float:
    """One-vs-rest macro AUC over softmax probabilities."""
    y_true = np.asarray(y_true)
    n_classes = probs.shape[1]
    absent = sorted(set(range(n_classes)) - set(y_true.tolist()))
    if absent:
        raise ClassAbsentInSplit(f"Classes {absent} have no samples; one-vs-rest AUC is undefined")
    return float(roc_auc_score(y_true, probs, multi_class="ovr", average="macro", labels=list(range(n_classes))))


def compute_metrics(y_true: Sequence[int], probs: np.ndarray, class_names: Sequence[str]) -> MetricsReport:
    """
    ACC plus macro-averaged precision, recall and F1 (zero_division=0) over predictions
    argmax(probs). AUC is None when a class is missing from y_true.
    """
    y_true = np.asarray(y_true, dtype=int)
    probs = np.asarray(probs, dtype=float)
    y_pred = probs.argmax(axis=1)
    labels = list(range(len(class_names)))

    precision, recall, f1, _ = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average="macro", zero_division=0)
    per_p, per_r, per_f, support = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average=None, zero_division=0)

    try:
        auc: Optional[float] = (binary_auc(y_true, probs[:, 1]) if len(labels) == 2
                                else multiclass_auc(y_true, probs))
    except ClassAbsentInSplit as e:
        logger.warning(f"AUC reported as absent: {e}")
        auc = None

    per_class = pd.DataFrame(
        {"precision": per_p, "recall": per_r, "f1": per_f, "support": support},
        index=pd.Index(list(class_names), name="class"),
    )
    return MetricsReport(
        acc=float(accuracy_score(y_true, y_pred)),
        f1=float(f1),
        precision=float(precision),
        recall=float(recall),
        auc=auc,
        n_samples=int(len(y_true)),
        class_names=tuple(class_names),
        confusion=confusion_matrix(y_true, y_pred, labels=labels),
        per_class=per_class,
    )


def format_report_table(rows: pd.DataFrame) -> str:
    """Console table in the ACC / AUC / F1 / Recall / Precision column order, values in percent."""
    columns = ["acc", "auc", "f1", "recall", "precision"]
    table = rows[columns].astype(float).mul(100).round(1)
    table.columns = ["ACC", "AUC", "F1", "Recall", "Precision"]
    return table.to_string(na_rep="-")
