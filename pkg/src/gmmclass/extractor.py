"""Small MLP feature extractor with hand-rolled analytic gradients.

The network is a chain of linear layers with tanh or relu between them and a
linear output layer producing the D-dimensional feature space. Cross-entropy
through the generative classifier differentiates into the features only; the
mixture parameters are treated as constants here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import GenerativeClassifier
from .density import SUM, log_mixture_terms, logsumexp_axis

TANH = "tanh"
RELU = "relu"
ACTIVATIONS = (TANH, RELU)


@dataclass
class Mlp:
    """Linear layers (in, out) with one activation between consecutive layers."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = TANH

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need matching nonempty weight/bias lists")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight (in, out) and bias (out,) required")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input dim does not chain")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class GradTape:
    """Cached activations from one forward pass; consumable exactly once."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]
    consumed: bool = False


def mlp_init(
    in_dim: int,
    hidden: tuple[int, ...],
    out_dim: int,
    activation: str = TANH,
    rng: np.random.Generator | None = None,
    input_mean: np.ndarray | None = None,
    input_std: np.ndarray | None = None,
) -> Mlp:
    """Random init with 1/sqrt(fan_in) weight scale and zero biases.

    When input statistics are given, standardization is folded into the first
    layer so raw inputs can be fed directly without a separate preprocessing
    step (and without extra serialization state).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)))
        biases.append(np.zeros(b))
    if input_mean is not None or input_std is not None:
        mean = np.zeros(in_dim) if input_mean is None else np.asarray(input_mean, dtype=np.float64)
        std = np.ones(in_dim) if input_std is None else np.asarray(input_std, dtype=np.float64)
        std = np.maximum(std, 1e-8)
        biases[0] = biases[0] - (mean / std) @ weights[0]
        weights[0] = weights[0] / std[:, None]
    return Mlp(weights, biases, activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == TANH else np.maximum(z, 0.0)


def forward(inputs: np.ndarray, mlp: Mlp) -> tuple[np.ndarray, GradTape]:
    """Deterministic forward pass; returns features and the gradient tape."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != mlp.in_dim:
        raise ValueError(f"expected inputs (N, {mlp.in_dim}), got {inputs.shape}")
    a = inputs
    pre, acts = [], []
    for w, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        z = a @ w + b
        a = _activate(z, mlp.activation)
        pre.append(z)
        acts.append(a)
    features = a @ mlp.weights[-1] + mlp.biases[-1]
    return features, GradTape(inputs=inputs, pre_activations=pre, activations=acts)


def backward(
    tape: GradTape, d_features: np.ndarray, mlp: Mlp
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reverse-mode gradients of every (weight, bias) given d loss/d features."""
    if tape.consumed:
        raise ValueError("gradient tape already consumed")
    if len(tape.activations) != len(mlp.weights) - 1:
        raise ValueError("tape does not match this network")
    d_features = np.asarray(d_features, dtype=np.float64)
    if d_features.shape != (tape.inputs.shape[0], mlp.out_dim):
        raise ValueError(
            f"expected upstream gradient shape {(tape.inputs.shape[0], mlp.out_dim)}"
        )
    tape.consumed = True

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(mlp.weights)  # type: ignore[list-item]
    delta = d_features
    for i in range(len(mlp.weights) - 1, -1, -1):
        prev = tape.activations[i - 1] if i > 0 else tape.inputs
        grads[i] = (prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = delta @ mlp.weights[i].T
            if mlp.activation == TANH:
                delta = delta * (1.0 - tape.activations[i - 1] ** 2)
            else:
                delta = delta * (tape.pre_activations[i - 1] > 0.0)
    return grads


def sgd_step(
    mlp: Mlp,
    grads: list[tuple[np.ndarray, np.ndarray]],
    lr: float,
    weight_decay: float = 0.0,
) -> Mlp:
    """Plain SGD with optional decoupled-from-nothing weight decay."""
    if lr <= 0.0:
        raise ValueError("lr must be positive")
    weights = [
        w - lr * (gw + weight_decay * w) for w, (gw, _) in zip(mlp.weights, grads)
    ]
    biases = [
        b - lr * (gb + weight_decay * b) for b, (_, gb) in zip(mlp.biases, grads)
    ]
    return Mlp(weights, biases, mlp.activation)


@dataclass
class CeTerms:
    """Intermediates of the generative cross-entropy, shared with phi-gradients."""

    loss: float
    d_scores: np.ndarray  # (N, C): d loss / d log p(x|c)
    responsibilities: np.ndarray  # (N, C, M) within-class component weights


def ce_loss_terms(
    features: np.ndarray, labels: np.ndarray, clf: GenerativeClassifier
) -> CeTerms:
    """Loss and per-class score gradients of -mean log posterior(label).

    Responsibilities follow each class's configured mode: soft softmax
    weights in SUM mode, a one-hot argmax (ties to the lowest component
    index) under winner-take-all.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    c = clf.n_classes
    if labels.shape != (n,):
        raise ValueError("labels must align with features")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")

    scores = np.empty((n, c))
    resp = np.empty((n, c, clf.n_components))
    for ci, p in enumerate(clf.per_class):
        terms = log_mixture_terms(features, p.weights, p.means, p.variances)
        if p.responsibility_mode == SUM:
            lse = logsumexp_axis(terms, axis=1)
            scores[:, ci] = lse
            resp[:, ci, :] = np.exp(terms - lse[:, None])
        else:
            best = np.argmax(terms, axis=1)
            scores[:, ci] = terms[np.arange(n), best]
            resp[:, ci, :] = 0.0
            resp[np.arange(n), ci, best] = 1.0

    with np.errstate(divide="ignore"):
        joint = scores + np.log(clf.class_prior)[None, :]
    log_post = joint - logsumexp_axis(joint, axis=1)[:, None]
    loss = float(-np.mean(log_post[np.arange(n), labels]))

    d_scores = np.exp(log_post)
    d_scores[np.arange(n), labels] -= 1.0
    d_scores /= n
    return CeTerms(loss=loss, d_scores=d_scores, responsibilities=resp)


def generative_ce_loss(
    features: np.ndarray, labels: np.ndarray, clf: GenerativeClassifier
) -> tuple[float, np.ndarray]:
    """Cross-entropy through the generative posterior and its feature gradient.

    All mixture parameters are held fixed; the returned gradient is exactly
    d loss / d features.
    """
    terms = ce_loss_terms(features, labels, clf)
    features = np.asarray(features, dtype=np.float64)

    # d score_c / d x = sum_m r_cm (mu_cm - x) / var_cm, accumulated over classes
    a = terms.d_scores[:, :, None] * terms.responsibilities  # (N, C, M)
    mu_over_var = np.stack(
        [p.means / p.variances for p in clf.per_class], axis=0
    )  # (C, M, D)
    inv_var = np.stack([1.0 / p.variances for p in clf.per_class], axis=0)
    d_feat = np.einsum("ncm,cmd->nd", a, mu_over_var) - features * np.einsum(
        "ncm,cmd->nd", a, inv_var
    )
    return terms.loss, d_feat
