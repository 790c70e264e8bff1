"""Closed-set, anomaly-detection and calibration metrics.

Binary detection metrics treat higher scores as more anomalous and label 1 as
the positive (anomalous) class. Ties get the midpoint convention in AUROC and
are grouped into a single threshold step elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = int(np.sum(labels == 1))
    if pos == 0 or pos == labels.size:
        raise ValueError("need at least one positive and one negative")
    return scores, labels


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must be nonempty and aligned")
    return float(np.mean(predictions == labels))


def mean_iou(predictions, labels, n_classes: int) -> float:
    """Mean over classes of TP / (TP + FP + FN); zero-union classes excluded."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must be nonempty and aligned")
    ious = []
    for c in range(n_classes):
        tp = np.sum((predictions == c) & (labels == c))
        fp = np.sum((predictions == c) & (labels != c))
        fn = np.sum((predictions != c) & (labels == c))
        union = tp + fp + fn
        if union > 0:
            ious.append(tp / union)
    if not ious:
        raise ValueError("no class has a nonzero union")
    return float(np.mean(ious))


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(equal), via midpoint-tied ranks."""
    scores, labels = _check_scores(scores, labels)
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    n_pos = int(np.sum(labels == 1))
    n_neg = scores.size - n_pos
    rank_sum = float(np.sum(ranks[np.asarray(labels) == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _detection_curve(scores: np.ndarray, labels: np.ndarray):
    """Cumulative TP/FP counts at descending distinct thresholds."""
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (np.asarray(labels)[order] == 1).astype(np.float64)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # keep only the last index of each tied group
    distinct = np.nonzero(np.r_[sorted_scores[1:] != sorted_scores[:-1], True])[0]
    return tp[distinct], fp[distinct]


def average_precision(scores, labels) -> float:
    """Step integral of precision over recall, tied scores grouped."""
    scores, labels = _check_scores(scores, labels)
    tp, fp = _detection_curve(scores, labels)
    n_pos = tp[-1]
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def fpr_at_tpr(scores, labels, tpr_target: float = 0.95) -> float:
    """Smallest false-positive rate among thresholds reaching the TPR target."""
    scores, labels = _check_scores(scores, labels)
    tp, fp = _detection_curve(scores, labels)
    tpr = tp / tp[-1]
    fpr = fp / fp[-1]
    feasible = tpr >= tpr_target
    return float(np.min(fpr[feasible]))


@dataclass(frozen=True)
class ReliabilityBins:
    """Per-bin calibration summary over equal-width confidence bins."""

    edges: np.ndarray  # (bins + 1,)
    counts: np.ndarray  # (bins,) integer, sums to N
    mean_confidence: np.ndarray  # (bins,), 0 where empty
    mean_accuracy: np.ndarray  # (bins,), 0 where empty

    def to_rows(self) -> list[dict]:
        return [
            {
                "bin_lo": float(self.edges[i]),
                "bin_hi": float(self.edges[i + 1]),
                "count": int(self.counts[i]),
                "conf": float(self.mean_confidence[i]),
                "acc": float(self.mean_accuracy[i]),
            }
            for i in range(self.counts.size)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bin_lo,bin_hi,count,conf,acc\n")
            for row in self.to_rows():
                fh.write(
                    f"{row['bin_lo']!r},{row['bin_hi']!r},{row['count']},"
                    f"{row['conf']!r},{row['acc']!r}\n"
                )


def ece(confidences, correctness, bins: int = 10) -> tuple[float, ReliabilityBins]:
    """Expected calibration error over equal-width bins, plus the bin table."""
    confidences = np.asarray(confidences, dtype=np.float64)
    correctness = np.asarray(correctness, dtype=np.float64)
    if confidences.shape != correctness.shape or confidences.ndim != 1:
        raise ValueError("confidences and correctness must be aligned vectors")
    if confidences.size and (confidences.min() < 0.0 or confidences.max() > 1.0):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum((confidences * bins).astype(int), bins - 1)
    counts = np.zeros(bins, dtype=np.int64)
    mean_conf = np.zeros(bins)
    mean_acc = np.zeros(bins)
    for b in range(bins):
        mask = idx == b
        counts[b] = int(np.sum(mask))
        if counts[b]:
            mean_conf[b] = float(np.mean(confidences[mask]))
            mean_acc[b] = float(np.mean(correctness[mask]))
    n = max(confidences.size, 1)
    value = float(np.sum(counts / n * np.abs(mean_acc - mean_conf)))
    return value, ReliabilityBins(edges, counts, mean_conf, mean_acc)
