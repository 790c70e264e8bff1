"""Generative GMM classification via Bayes rule, plus the softmax baseline.

The generative classifier keeps one Gaussian mixture per class and a class
prior; prediction takes the posterior argmax and anomaly scoring thresholds
the largest class-conditional log-density. The baseline is a plain affine
softmax head over the same feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import GmmParams, log_mixture, logsumexp_axis


@dataclass
class GenerativeClassifier:
    """Per-class mixtures plus a class prior (uniform by default)."""

    per_class: list[GmmParams]
    class_prior: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.per_class:
            raise ValueError("need at least one class")
        d = self.per_class[0].dim
        m = self.per_class[0].n_components
        for p in self.per_class[1:]:
            if p.dim != d or p.n_components != m:
                raise ValueError("all classes must share D and M")
        if self.class_prior is None:
            self.class_prior = np.full(len(self.per_class), 1.0 / len(self.per_class))
        self.class_prior = np.asarray(self.class_prior, dtype=np.float64)
        if self.class_prior.shape != (len(self.per_class),):
            raise ValueError("prior length must equal the class count")
        if np.any(self.class_prior < 0.0) or abs(self.class_prior.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a probability vector")

    @property
    def n_classes(self) -> int:
        return len(self.per_class)

    @property
    def dim(self) -> int:
        return self.per_class[0].dim

    @property
    def n_components(self) -> int:
        return self.per_class[0].n_components


@dataclass
class SoftmaxBaseline:
    """Affine logits w_c . x + b_c with a softmax posterior."""

    weights: np.ndarray  # (C, D)
    biases: np.ndarray  # (C,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (C, D) with (C,) biases")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise ValueError("parameters must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"expected feature dimension {dim}, got shape {x.shape}")
    return pts, single


def log_class_cond(x, clf: GenerativeClassifier):
    """Log p(x|c) for every class; (C,) for a vector, (N, C) for a batch."""
    pts, single = _as_batch(x, clf.dim)
    out = np.stack([log_mixture(pts, p) for p in clf.per_class], axis=1)
    return out[0] if single else out


def _log_posterior(scores: np.ndarray, prior: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        joint = scores + np.log(prior)[None, :]
    return joint - logsumexp_axis(joint, axis=1)[:, None]


def posterior(x, clf: GenerativeClassifier):
    """Bayes-rule posterior p(c|x); rows sum to 1."""
    pts, single = _as_batch(x, clf.dim)
    post = np.exp(_log_posterior(log_class_cond(pts, clf), clf.class_prior))
    return post[0] if single else post


def predict(x, clf: GenerativeClassifier):
    """Posterior argmax; exact ties resolve to the smallest class index."""
    pts, single = _as_batch(x, clf.dim)
    pred = np.argmax(posterior(pts, clf), axis=1)
    return int(pred[0]) if single else pred


def anomaly_score(x, clf: GenerativeClassifier):
    """Negated best class-conditional log-density; higher = more anomalous.

    Log-domain form of -max_c p(x|c): the two are related by a strictly
    increasing transform, so every ranking-based detection metric agrees.
    """
    pts, single = _as_batch(x, clf.dim)
    score = -np.max(log_class_cond(pts, clf), axis=1)
    return float(score[0]) if single else score


def softmax_posterior(x, base: SoftmaxBaseline):
    """Stable softmax over affine logits; rows sum to 1."""
    pts, single = _as_batch(x, base.weights.shape[1])
    logits = pts @ base.weights.T + base.biases[None, :]
    logits = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits)
    post = e / e.sum(axis=1, keepdims=True)
    return post[0] if single else post


def msp_anomaly_score(x, base: SoftmaxBaseline):
    """1 - max softmax probability, the usual discriminative anomaly proxy."""
    pts, single = _as_batch(x, base.weights.shape[1])
    score = 1.0 - np.max(softmax_posterior(pts, base), axis=1)
    return float(score[0]) if single else score
