"""Model-level evaluation glue: run a dataset through a trained model.

Closed-set evaluation reports accuracy, mean IoU and calibration; anomaly
evaluation scores a normal/anomaly split with the model's native anomaly
score (negative best class-conditional log-density for generative models,
one minus the top softmax probability for the baseline).
"""

from __future__ import annotations

import numpy as np

from .classifier import (
    GenerativeClassifier,
    SoftmaxBaseline,
    anomaly_score,
    msp_anomaly_score,
    posterior,
    softmax_posterior,
)
from .data import LabeledSet
from .extractor import Mlp, forward
from .metrics import accuracy, auroc, average_precision, ece, fpr_at_tpr, mean_iou


def _posteriors(model, features: np.ndarray) -> np.ndarray:
    if isinstance(model, GenerativeClassifier):
        return posterior(features, model)
    if isinstance(model, SoftmaxBaseline):
        return softmax_posterior(features, model)
    raise TypeError(f"cannot evaluate model of type {type(model).__name__}")


def evaluate_closed_set(model, mlp: Mlp, dataset: LabeledSet, bins: int = 10) -> dict:
    """Accuracy, mean IoU, ECE and reliability bins on a labeled split."""
    features, _ = forward(dataset.samples, mlp)
    post = _posteriors(model, features)
    predictions = np.argmax(post, axis=1)
    confidence = np.max(post, axis=1)
    correct = (predictions == dataset.labels).astype(np.float64)
    ece_value, reliability = ece(confidence, correct, bins=bins)
    return {
        "accuracy": accuracy(predictions, dataset.labels),
        "mIoU": mean_iou(predictions, dataset.labels, post.shape[1]),
        "ece": ece_value,
        "bins": reliability.to_rows(),
    }


def anomaly_scores(model, mlp: Mlp, samples: np.ndarray) -> np.ndarray:
    features, _ = forward(samples, mlp)
    if isinstance(model, GenerativeClassifier):
        return anomaly_score(features, model)
    if isinstance(model, SoftmaxBaseline):
        return msp_anomaly_score(features, model)
    raise TypeError(f"cannot score model of type {type(model).__name__}")


def evaluate_ood(model, mlp: Mlp, dataset: LabeledSet) -> dict:
    """AUROC / AP / FPR95 on a split whose labels flag anomalies with 1."""
    scores = anomaly_scores(model, mlp, dataset.samples)
    return {
        "auroc": auroc(scores, dataset.labels),
        "ap": average_precision(scores, dataset.labels),
        "fpr95": fpr_at_tpr(scores, dataset.labels, 0.95),
    }
