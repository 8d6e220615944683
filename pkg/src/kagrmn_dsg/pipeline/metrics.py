"""Accuracy and macro-F1 over the fixed three-class label set."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..heads import LABELS


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], num_classes: int = len(LABELS)) -> np.ndarray:
    """Rows are gold classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for g, p in zip(gold, pred, strict=True):
        if not (0 <= g < num_classes and 0 <= p < num_classes):
            raise ValueError(f"label id outside [0, {num_classes}): gold={g} pred={p}")
        cm[g, p] += 1
    return cm


def metrics_from_confusion(cm: np.ndarray) -> dict:
    """Per-class F1 uses 0/0 := 0; macro-F1 averages over every class."""
    cm = np.asarray(cm)
    total = int(cm.sum())
    tp = np.diag(cm).astype(float)
    pred_count = cm.sum(axis=0).astype(float)
    gold_count = cm.sum(axis=1).astype(float)
    # 2PR / (P + R) rewritten as 2tp / (2tp + fp + fn): one rounding, and 0 when the class never occurs
    denom = pred_count + gold_count
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return {
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "macro_f1": float(f1.mean()),
        "per_class_f1": {LABELS[i]: float(f1[i]) for i in range(len(f1))},
        "confusion_matrix": cm.tolist(),
    }


def compute_metrics(gold: Sequence[int], pred: Sequence[int]) -> dict:
    return metrics_from_confusion(confusion_matrix(gold, pred))
