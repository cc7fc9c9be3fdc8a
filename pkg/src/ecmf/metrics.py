"""Weighted F-score (WAF), per-class F1, and confusion matrices.

Zero-denominator convention: precision, recall, and F1 are 0 when undefined;
classes with zero support contribute nothing to the weighted mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import LABELS, NUM_CLASSES, EmotionLabel
from .errors import EmptyInput, LengthMismatch


@dataclass(frozen=True)
class MetricsReport:
    confusion: np.ndarray          # (6, 6) counts, rows = gold, cols = predicted
    per_class_f1: np.ndarray       # (6,)
    waf: float
    accuracy: float
    support: np.ndarray            # (6,) gold counts

    def to_json(self) -> dict:
        return {
            "labels": [lab.value for lab in LABELS],
            "confusion": self.confusion.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "waf": self.waf,
            "accuracy": self.accuracy,
            "support": self.support.tolist(),
        }


def confusion_matrix(golds: Sequence[EmotionLabel], preds: Sequence[EmotionLabel]) -> np.ndarray:
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} gold labels vs {len(preds)} predictions")
    if len(golds) == 0:
        raise EmptyInput("no (gold, pred) pairs to score")
    mat = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for g, p in zip(golds, preds):
        mat[g.index, p.index] += 1
    return mat


def _f1_from_confusion(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros(NUM_CLASSES), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros(NUM_CLASSES), where=(tp + fn) > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(NUM_CLASSES), where=pr > 0)
    support = confusion.sum(axis=1).astype(np.float64)
    return f1, support


def weighted_f_score(golds: Sequence[EmotionLabel], preds: Sequence[EmotionLabel]) -> float:
    """Support-weighted mean of per-class F1 over the classes that appear in gold."""
    f1, support = _f1_from_confusion(confusion_matrix(golds, preds))
    return float((support * f1).sum() / support.sum())


def compute_metrics(golds: Sequence[EmotionLabel], preds: Sequence[EmotionLabel]) -> MetricsReport:
    confusion = confusion_matrix(golds, preds)
    f1, support = _f1_from_confusion(confusion)
    waf = float((support * f1).sum() / support.sum())
    accuracy = float(np.diag(confusion).sum() / confusion.sum())
    return MetricsReport(confusion, f1, waf, accuracy, support.astype(np.int64))


def format_waf(waf: float) -> str:
    """Render a WAF the way leaderboards print it, e.g. 0.8749 -> '87.49%'."""
    return f"{waf * 100:.2f}%"
