"""Pixel-wise AUROC and average precision from scratch, the EMA early
stopping rule, and pooled dataset evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import UndefinedMetricError
from .image import AnomalyMap

STOP_THRESHOLD = 0.875
EMA_DECAY = 0.9


@dataclass(frozen=True)
class MetricReport:
    auroc: float
    ap: float
    prevalence: float
    n_positive: int
    n_negative: int

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "ap": self.ap,
            "prevalence": self.prevalence,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
        }


@dataclass(frozen=True)
class StopState:
    """Exponential moving average of validation AP with a fixed threshold."""

    ema: float = 0.0
    threshold: float = STOP_THRESHOLD
    initialized: bool = False


def _as_score_label_vectors(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    l = np.asarray(labels).ravel()
    if s.shape != l.shape:
        raise ValueError(f"scores {s.shape} and labels {l.shape} differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if l.dtype != np.bool_:
        unique = np.unique(l)
        if not np.all(np.isin(unique, (0, 1))):
            raise ValueError("labels must be binary")
        l = l.astype(bool)
    n_pos = int(l.sum())
    n_neg = l.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"metric undefined for single-class labels ({n_pos} positive, {n_neg} negative)"
        )
    return s, l


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(pos > neg) with ties counted half.

    Computed through tie-averaged ranks, which is exact for the pairwise
    counting definition.
    """
    s, l = _as_score_label_vectors(scores, labels)
    n = s.size
    order = np.argsort(s, kind="mergesort")
    s_sorted = s[order]
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = s_sorted[1:] != s_sorted[:-1]
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg_rank = (starts + 1 + ends) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = avg_rank[group_id]
    n_pos = int(l.sum())
    n_neg = n - n_pos
    u = ranks[l].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise AP over descending unique thresholds, ties grouped.

    No interpolation, so constant scores give AP equal to the positive
    prevalence exactly.
    """
    s, l = _as_score_label_vectors(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s_desc = s[order]
    l_desc = l[order].astype(np.float64)
    group_end = np.empty(s.size, dtype=bool)
    group_end[:-1] = s_desc[1:] != s_desc[:-1]
    group_end[-1] = True
    tp = np.cumsum(l_desc)[group_end]
    seen = np.flatnonzero(group_end) + 1.0
    precision = tp / seen
    n_pos = float(l.sum())
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def update_stop(state: StopState, ap: float) -> tuple[StopState, bool]:
    """Fold one validation AP into the moving average; stop at 0.875.

    The first observation seeds the average directly.
    """
    if not (0.0 <= ap <= 1.0):
        raise ValueError(f"ap {ap} outside [0, 1]")
    if state.initialized:
        ema = EMA_DECAY * state.ema + (1.0 - EMA_DECAY) * ap
    else:
        ema = ap
    new_state = StopState(ema=ema, threshold=state.threshold, initialized=True)
    return new_state, ema >= state.threshold


def evaluate_dataset(pred_maps: Sequence[AnomalyMap], gt_maps: Sequence[np.ndarray]) -> MetricReport:
    """Pool every pixel of every sample and score the pooled vectors."""
    if len(pred_maps) != len(gt_maps):
        raise ValueError("prediction and ground-truth counts differ")
    if not pred_maps:
        raise ValueError("nothing to evaluate")
    scores = []
    labels = []
    for pred, gt in zip(pred_maps, gt_maps):
        gt_arr = np.asarray(gt)
        if pred.values.shape != gt_arr.shape:
            raise ValueError(
                f"prediction shape {pred.values.shape} != ground truth {gt_arr.shape}"
            )
        scores.append(pred.values.ravel().astype(np.float64))
        labels.append(gt_arr.ravel())
    s = np.concatenate(scores)
    l = np.concatenate(labels)
    area_under = auroc(s, l)
    ap = average_precision(s, l)
    n_pos = int(np.asarray(l, dtype=bool).sum())
    n_neg = l.size - n_pos
    return MetricReport(
        auroc=area_under,
        ap=ap,
        prevalence=n_pos / l.size,
        n_positive=n_pos,
        n_negative=n_neg,
    )
