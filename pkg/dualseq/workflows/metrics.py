"""
Per-visit classification metrics, ROC area and decision-threshold selection
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support, roc_auc_score

from dualseq.errors import DimensionError

logger = logging.getLogger(__name__)

METRICS = ("recall", "precision", "accuracy", "auc", "f1")
DEFAULT_GRID = np.round(np.arange(1, 100) * 0.01, 2)


def threshold_grid(step: float = 0.01) -> np.ndarray:
    """Open grid (0, 1) with the given spacing"""
    n = int(round(1.0 / step))
    return np.round(np.arange(1, n) * step, 10)


def _pairs(scores: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores for {labels.size} labels")
    return scores, labels


@dataclass(frozen=True)
class ConfusionMetrics:
    recall: float
    precision: float
    accuracy: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    # metrics whose ratio was 0/0 and are reported as 0
    undefined: FrozenSet[str] = frozenset()


def confusion_metrics(scores: np.ndarray, labels: np.ndarray, alpha: float) -> ConfusionMetrics:
    """Recall, precision, accuracy and F1 when predicting positive for score >= alpha"""
    scores, labels = _pairs(scores, labels)
    if scores.size == 0:
        raise DimensionError("cannot score an empty set of visits")
    pred = (scores >= alpha).astype(np.int64)
    tn, fp, fn, tp = (int(c) for c in confusion_matrix(labels, pred, labels=[0, 1]).ravel())
    precision, recall, f1, _ = precision_recall_fscore_support(labels, pred, average="binary", zero_division=0)
    denominators = {"recall": tp + fn, "precision": tp + fp, "f1": 2 * tp + fp + fn}
    return ConfusionMetrics(
        recall=float(recall),
        precision=float(precision),
        accuracy=float(accuracy_score(labels, pred)),
        f1=float(f1),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        undefined=frozenset(k for k, den in denominators.items() if den == 0),
    )


def _f1_grid(scores: np.ndarray, labels: np.ndarray, grid: np.ndarray) -> np.ndarray:
    pred = scores[None, :] >= grid[:, None]
    pos = (labels == 1)[None, :]
    tp = np.sum(pred & pos, axis=1)
    fp = np.sum(pred & ~pos, axis=1)
    fn = np.sum(~pred & pos, axis=1)
    den = 2 * tp + fp + fn
    return np.where(den > 0, 2.0 * tp / np.maximum(den, 1), 0.0)


def select_threshold(scores: np.ndarray, labels: np.ndarray, grid: Optional[np.ndarray] = None) -> float:
    """
    Grid threshold with the best F1 on validation pairs; ties go to the smallest

    Single-class labels fall back to 0.5 with a warning.
    """
    scores, labels = _pairs(scores, labels)
    if scores.size == 0:
        raise DimensionError("cannot select a threshold without validation pairs")
    if np.all(labels == labels[0]):
        logger.warning("Validation labels contain a single class; using threshold 0.5")
        return 0.5
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    # argmax returns the first (smallest) maximiser
    return float(grid[int(np.argmax(_f1_grid(scores, labels, grid)))])


def auc(scores: np.ndarray, labels: np.ndarray, warn: bool = True) -> float:
    """
    Trapezoidal ROC area over all distinct thresholds (tied scores step together)

    Returns:
        nan, with a warning, when one class is absent
    """
    scores, labels = _pairs(scores, labels)
    if np.unique(labels).size < 2:
        logger.log(logging.WARNING if warn else logging.DEBUG, "ROC area undefined: only one class present")
        return float("nan")
    return float(roc_auc_score(labels, scores))


def threshold_sweep(scores: np.ndarray, labels: np.ndarray, grid: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Recall, precision and F1 at every grid threshold"""
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=np.float64)
    rows = []
    for alpha in grid:
        m = confusion_metrics(scores, labels, float(alpha))
        rows.append({"threshold": float(alpha), "recall": m.recall, "precision": m.precision, "f1": m.f1})
    return pd.DataFrame(rows, columns=["threshold", "recall", "precision", "f1"])


def score_all(scores: np.ndarray, labels: np.ndarray, alpha: float) -> Dict[str, float]:
    """Every reported metric at one threshold (auc is nan for a single class)"""
    m = confusion_metrics(scores, labels, alpha)
    return {
        "recall": m.recall,
        "precision": m.precision,
        "accuracy": m.accuracy,
        "auc": auc(scores, labels, warn=False),
        "f1": m.f1,
    }
