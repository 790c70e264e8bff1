"""Hybrid, discriminative-GMM and softmax training loops.

Hybrid mode alternates, within every iteration, one EM update of the mixture
parameters on (memory + batch) features with one SGD step on the extractor
driven by the generative cross-entropy. Mixture parameters never see a
gradient; extractor parameters never see an EM update. The discriminative
variant instead backpropagates into everything (means, log-variances,
weight logits) with no EM and no memory, and the softmax baseline is plain
joint SGD on an affine head.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model_io
from .classifier import GenerativeClassifier, SoftmaxBaseline, softmax_posterior
from .data import LabeledSet
from .density import VARIANCE_FLOOR, WINNER_TAKE_ALL, GmmParams
from .em import EmConfig, e_step_vanilla, em_loop, init_gmm, mixture_log_likelihood
from .extractor import (
    Mlp,
    backward,
    ce_loss_terms,
    forward,
    generative_ce_loss,
    mlp_init,
    sgd_step,
)
from .memory import FeatureMemory, sparse_sample

HYBRID = "hybrid"
DISC_GMM = "disc-gmm"
SOFTMAX = "softmax"
MODES = (HYBRID, DISC_GMM, SOFTMAX)


class TrainingDiverged(RuntimeError):
    """Raised when the loss stops being finite; carries the iteration index."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    mode: str = HYBRID
    iterations: int = 1200
    batch_size: int = 128
    lr: float = 0.1
    weight_decay: float = 0.0
    seed: int = 0
    n_components: int = 2
    feature_dim: int = 16
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    responsibility_mode: str = WINNER_TAKE_ALL
    em: EmConfig = field(default_factory=EmConfig)
    memory_capacity: int = 2048
    samples_per_class: int = 100
    em_first: bool = True
    verify_isolation: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.lr < 0.0:
            raise ValueError("lr must be nonnegative")
        if self.n_components < 1 or self.feature_dim < 1:
            raise ValueError("n_components and feature_dim must be >= 1")
        if self.memory_capacity < 0 or self.samples_per_class < 1:
            raise ValueError("bad memory settings")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    per_class_log_likelihood: list[float | None]
    events: list[str] = field(default_factory=list)


@dataclass
class TrainReport:
    mode: str
    records: list[IterationRecord] = field(default_factory=list)
    never_updated_classes: list[int] = field(default_factory=list)
    isolation_ok: bool | None = None

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "iterations": len(self.records),
            "neverUpdatedClasses": self.never_updated_classes,
            "isolationOk": self.isolation_ok,
            "records": [
                {
                    "iteration": r.iteration,
                    "loss": r.loss,
                    "perClassLogLikelihood": r.per_class_log_likelihood,
                    "events": r.events,
                }
                for r in self.records
            ],
        }


def hash_phi(clf: GenerativeClassifier) -> str:
    h = hashlib.sha256()
    h.update(clf.class_prior.tobytes())
    for p in clf.per_class:
        h.update(p.weights.tobytes())
        h.update(p.means.tobytes())
        h.update(p.variances.tobytes())
    return h.hexdigest()


def hash_theta(mlp: Mlp) -> str:
    h = hashlib.sha256()
    for w, b in zip(mlp.weights, mlp.biases):
        h.update(w.tobytes())
        h.update(b.tobytes())
    return h.hexdigest()


def _n_classes(data: LabeledSet) -> int:
    if len(data) == 0:
        raise ValueError("training data must be nonempty")
    return int(data.labels.max()) + 1


def _initial_gmms(n_classes, n_components, dim, mode) -> list[GmmParams]:
    """Placeholder mixtures used until a class is first observed."""
    return [
        GmmParams(
            weights=np.full(n_components, 1.0 / n_components),
            means=np.zeros((n_components, dim)),
            variances=np.ones((n_components, dim)),
            responsibility_mode=mode,
        )
        for _ in range(n_classes)
    ]


def _init_mlp(data: LabeledSet, cfg: TrainConfig, rng) -> Mlp:
    # Fold train-set standardization into the first layer so tanh units
    # start in their linear regime regardless of the raw input scale.
    mean = data.samples.mean(axis=0)
    std = data.samples.std(axis=0)
    return mlp_init(
        data.in_dim,
        cfg.hidden,
        cfg.feature_dim,
        activation=cfg.activation,
        rng=rng,
        input_mean=mean,
        input_std=std,
    )


def _batch_indices(rng, n: int, batch_size: int) -> np.ndarray:
    if batch_size >= n:
        return np.arange(n)
    return rng.choice(n, size=batch_size, replace=False)


def _check_finite_loss(loss: float, iteration: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDiverged(iteration, loss)


def train_hybrid(
    data: LabeledSet, cfg: TrainConfig, start_state: dict | None = None
) -> tuple[GenerativeClassifier, Mlp, TrainReport]:
    """Generative EM for the classifier, discriminative SGD for the extractor.

    Per iteration: forward a batch; sparse-sample and push detached features
    to memory; run one (or more) momentum EM loops per present class on that
    class's memory snapshot concatenated with its batch features; then take
    one cross-entropy SGD step on the extractor with the fresh mixtures held
    fixed. start_state (from load_checkpoint) resumes a previous run.
    """
    if cfg.mode != HYBRID:
        raise ValueError(f"train_hybrid called with mode {cfg.mode!r}")
    n_classes = _n_classes(data)

    if start_state is None:
        rng = np.random.default_rng(cfg.seed)
        mlp = _init_mlp(data, cfg, rng)
        clf = GenerativeClassifier(
            per_class=_initial_gmms(
                n_classes, cfg.n_components, cfg.feature_dim, cfg.responsibility_mode
            )
        )
        memory = (
            FeatureMemory(
                n_classes,
                cfg.n_components,
                cfg.feature_dim,
                capacity_per_queue=cfg.memory_capacity,
                samples_per_class=cfg.samples_per_class,
            )
            if cfg.memory_capacity > 0
            else None
        )
        initialized = [False] * n_classes
        start_iteration = 0
    else:
        rng = np.random.default_rng(cfg.seed)
        rng.bit_generator.state = start_state["rng_state"]
        mlp = start_state["mlp"]
        clf = start_state["classifier"]
        memory = start_state["memory"]
        initialized = list(start_state["initialized"])
        start_iteration = int(start_state["iteration"])

    report = TrainReport(mode=cfg.mode)
    isolation_ok = True

    for it in range(start_iteration, cfg.iterations):
        idx = _batch_indices(rng, len(data), cfg.batch_size)
        x, y = data.samples[idx], data.labels[idx]
        feats, tape = forward(x, mlp)
        per_class_ll: list[float | None] = [None] * n_classes
        events: list[str] = []

        def em_phase():
            nonlocal isolation_ok
            theta_before = hash_theta(mlp) if cfg.verify_isolation else None
            present = sorted(int(c) for c in np.unique(y))
            if memory is not None:
                routing = {
                    c: e_step_vanilla(feats[y == c], clf.per_class[c]) for c in present
                }
                for (c, m), rows in sparse_sample(
                    feats, y, routing, cfg.samples_per_class, rng
                ).items():
                    memory.push(c, m, rows)
            for c in present:
                f_c = feats[y == c]
                if memory is not None:
                    working = np.concatenate([memory.snapshot(c), f_c], axis=0)
                else:
                    working = f_c
                if not initialized[c]:
                    clf.per_class[c] = init_gmm(
                        working,
                        cfg.n_components,
                        responsibility_mode=cfg.responsibility_mode,
                        floor=cfg.em.variance_floor,
                        rng=rng,
                    )
                    initialized[c] = True
                result = em_loop(working, clf.per_class[c], cfg.em, rng)
                clf.per_class[c] = result.params
                per_class_ll[c] = result.log_likelihood / working.shape[0]
                events.extend(f"class {c}: {e}" for e in result.events)
            if cfg.verify_isolation and hash_theta(mlp) != theta_before:
                isolation_ok = False

        def grad_phase():
            nonlocal mlp, isolation_ok
            phi_before = hash_phi(clf) if cfg.verify_isolation else None
            loss, d_feat = generative_ce_loss(feats, y, clf)
            _check_finite_loss(loss, it)
            if cfg.lr > 0.0:
                grads = backward(tape, d_feat, mlp)
                mlp = sgd_step(mlp, grads, cfg.lr, cfg.weight_decay)
            if cfg.verify_isolation and hash_phi(clf) != phi_before:
                isolation_ok = False
            return loss

        if cfg.em_first:
            em_phase()
            loss = grad_phase()
        else:
            loss = grad_phase()
            em_phase()

        report.records.append(
            IterationRecord(
                iteration=it,
                loss=loss,
                per_class_log_likelihood=per_class_ll,
                events=events,
            )
        )

    report.never_updated_classes = [c for c in range(n_classes) if not initialized[c]]
    report.isolation_ok = isolation_ok if cfg.verify_isolation else None
    return clf, mlp, report


def _phi_gradients(feats, clf, terms, mu, rho, alpha):
    """Cross-entropy gradients w.r.t. the unconstrained mixture parameters.

    Variances are parameterized as exp(rho) and weights as softmax(alpha), so
    the returned gradients live in unconstrained space.
    """
    g_mu = np.zeros_like(mu)
    g_rho = np.zeros_like(rho)
    g_alpha = np.zeros_like(alpha)
    for c, p in enumerate(clf.per_class):
        a = terms.d_scores[:, c, None] * terms.responsibilities[:, c, :]  # (N, M)
        diff = feats[:, None, :] - p.means[None, :, :]  # (N, M, D)
        g_mu[c] = np.einsum("nm,nmd->md", a, diff / p.variances[None, :, :])
        g_rho[c] = np.einsum(
            "nm,nmd->md", a, 0.5 * (diff * diff / p.variances[None, :, :] - 1.0)
        )
        g_log_pi = a.sum(axis=0)
        g_alpha[c] = g_log_pi - p.weights * g_log_pi.sum()
    return g_mu, g_rho, g_alpha


# Keep log-variances inside a range where exp() is safe and the mixtures
# stay usable; gradient steps on rho are free to wander otherwise.
_RHO_MIN = float(np.log(VARIANCE_FLOOR))
_RHO_MAX = 20.0


def _materialize_classifier(mu, rho, alpha, mode) -> GenerativeClassifier:
    per_class = []
    for c in range(mu.shape[0]):
        shifted = alpha[c] - alpha[c].max()
        w = np.exp(shifted)
        per_class.append(
            GmmParams(
                weights=w / w.sum(),
                means=mu[c],
                variances=np.exp(np.clip(rho[c], _RHO_MIN, _RHO_MAX)),
                responsibility_mode=mode,
            )
        )
    return GenerativeClassifier(per_class=per_class)


def train_discriminative_gmm(
    data: LabeledSet, cfg: TrainConfig
) -> tuple[GenerativeClassifier, Mlp, TrainReport]:
    """End-to-end gradient training of extractor and mixture parameters.

    Same loss as hybrid mode, but gradients flow into means, log-variances
    and weight logits; there is no EM and no feature memory.
    """
    if cfg.mode != DISC_GMM:
        raise ValueError(f"train_discriminative_gmm called with mode {cfg.mode!r}")
    n_classes = _n_classes(data)
    rng = np.random.default_rng(cfg.seed)
    mlp = _init_mlp(data, cfg, rng)

    feats0, _ = forward(data.samples, mlp)
    mu = np.empty((n_classes, cfg.n_components, cfg.feature_dim))
    rho = np.empty_like(mu)
    alpha = np.zeros((n_classes, cfg.n_components))
    for c in range(n_classes):
        rows = feats0[data.labels == c]
        if rows.shape[0] == 0:
            rows = feats0
        p = init_gmm(
            rows,
            cfg.n_components,
            responsibility_mode=cfg.responsibility_mode,
            floor=cfg.em.variance_floor,
            rng=rng,
        )
        mu[c] = p.means
        rho[c] = np.log(p.variances)
    clf = _materialize_classifier(mu, rho, alpha, cfg.responsibility_mode)

    report = TrainReport(mode=cfg.mode)
    for it in range(cfg.iterations):
        idx = _batch_indices(rng, len(data), cfg.batch_size)
        x, y = data.samples[idx], data.labels[idx]
        feats, tape = forward(x, mlp)

        terms = ce_loss_terms(feats, y, clf)
        _check_finite_loss(terms.loss, it)
        g_mu, g_rho, g_alpha = _phi_gradients(feats, clf, terms, mu, rho, alpha)

        a = terms.d_scores[:, :, None] * terms.responsibilities
        mu_over_var = np.stack([p.means / p.variances for p in clf.per_class])
        inv_var = np.stack([1.0 / p.variances for p in clf.per_class])
        d_feat = np.einsum("ncm,cmd->nd", a, mu_over_var) - feats * np.einsum(
            "ncm,cmd->nd", a, inv_var
        )

        if cfg.lr > 0.0:
            grads = backward(tape, d_feat, mlp)
            mlp = sgd_step(mlp, grads, cfg.lr, cfg.weight_decay)
            mu -= cfg.lr * g_mu
            rho = np.clip(rho - cfg.lr * g_rho, _RHO_MIN, _RHO_MAX)
            alpha -= cfg.lr * g_alpha
            clf = _materialize_classifier(mu, rho, alpha, cfg.responsibility_mode)

        per_class_ll: list[float | None] = [None] * n_classes
        for c in sorted(int(c) for c in np.unique(y)):
            f_c = feats[y == c]
            per_class_ll[c] = mixture_log_likelihood(f_c, clf.per_class[c]) / f_c.shape[0]
        report.records.append(
            IterationRecord(
                iteration=it, loss=terms.loss, per_class_log_likelihood=per_class_ll
            )
        )
    return clf, mlp, report


def train_softmax_baseline(
    data: LabeledSet, cfg: TrainConfig
) -> tuple[SoftmaxBaseline, Mlp, TrainReport]:
    """Joint SGD on the affine softmax head and the extractor."""
    if cfg.mode != SOFTMAX:
        raise ValueError(f"train_softmax_baseline called with mode {cfg.mode!r}")
    n_classes = _n_classes(data)
    rng = np.random.default_rng(cfg.seed)
    mlp = _init_mlp(data, cfg, rng)
    w = rng.normal(0.0, 1.0 / np.sqrt(cfg.feature_dim), size=(n_classes, cfg.feature_dim))
    b = np.zeros(n_classes)

    report = TrainReport(mode=cfg.mode)
    for it in range(cfg.iterations):
        idx = _batch_indices(rng, len(data), cfg.batch_size)
        x, y = data.samples[idx], data.labels[idx]
        feats, tape = forward(x, mlp)
        base = SoftmaxBaseline(weights=w, biases=b)
        post = softmax_posterior(feats, base)
        n = feats.shape[0]
        loss = float(-np.mean(np.log(post[np.arange(n), y])))
        _check_finite_loss(loss, it)

        d_logits = post.copy()
        d_logits[np.arange(n), y] -= 1.0
        d_logits /= n
        d_w = d_logits.T @ feats
        d_b = d_logits.sum(axis=0)
        d_feat = d_logits @ w

        if cfg.lr > 0.0:
            grads = backward(tape, d_feat, mlp)
            mlp = sgd_step(mlp, grads, cfg.lr, cfg.weight_decay)
            w = w - cfg.lr * (d_w + cfg.weight_decay * w)
            b = b - cfg.lr * d_b

        report.records.append(
            IterationRecord(
                iteration=it,
                loss=loss,
                per_class_log_likelihood=[None] * n_classes,
            )
        )
    return SoftmaxBaseline(weights=w, biases=b), mlp, report


def train(data: LabeledSet, cfg: TrainConfig):
    """Dispatch on cfg.mode; returns (model, mlp, report)."""
    if cfg.mode == HYBRID:
        return train_hybrid(data, cfg)
    if cfg.mode == DISC_GMM:
        return train_discriminative_gmm(data, cfg)
    return train_softmax_baseline(data, cfg)


def save_checkpoint(
    directory,
    model,
    mlp: Mlp,
    memory: FeatureMemory | None,
    iteration: int,
    rng_state: dict,
    initialized: list[bool],
) -> None:
    """Resumable training state: model JSON + memory dump + counters."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model_io.save_model(directory / "model.json", model, mlp)
    if memory is not None:
        memory.dump(directory / "memory.gmem")
    state = {
        "iteration": iteration,
        "rngState": _jsonable_rng_state(rng_state),
        "initialized": list(initialized),
        "hasMemory": memory is not None,
    }
    with open(directory / "state.json", "w", encoding="utf-8") as fh:
        json.dump(state, fh, indent=2)


def load_checkpoint(directory) -> dict:
    directory = Path(directory)
    model, mlp = model_io.load_model(directory / "model.json")
    with open(directory / "state.json", "r", encoding="utf-8") as fh:
        state = json.load(fh)
    memory = None
    if state["hasMemory"]:
        memory = FeatureMemory.restore(directory / "memory.gmem")
    return {
        "classifier": model,
        "mlp": mlp,
        "memory": memory,
        "iteration": state["iteration"],
        "rng_state": _rng_state_from_json(state["rngState"]),
        "initialized": state["initialized"],
    }


# PCG64 state is a nest of plain ints and strings, which Python's json
# handles losslessly (ints are arbitrary precision on both ends).
def _jsonable_rng_state(state: dict) -> dict:
    return state


def _rng_state_from_json(state: dict) -> dict:
    return state
