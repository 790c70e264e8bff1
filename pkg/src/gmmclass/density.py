"""Log-space evaluation of diagonal-covariance Gaussians and Gaussian mixtures.

Everything downstream (EM, transport costs, classification, anomaly scores)
is built on the functions in this module. All computation stays in natural-log
space; probabilities are only exponentiated at reporting boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Minimum admissible variance (feature units squared). Prevents degenerate
# density spikes when a component captures near-duplicate samples.
VARIANCE_FLOOR = 1e-6

# Responsibility modes for mixture evaluation.
SUM = "sum"
WINNER_TAKE_ALL = "winner_take_all"
RESPONSIBILITY_MODES = (SUM, WINNER_TAKE_ALL)

_LOG_2PI = float(np.log(2.0 * np.pi))


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class DiagGaussian:
    """A single Gaussian with diagonal covariance.

    mean and variance are length-D vectors; every variance entry must be
    at least VARIANCE_FLOOR.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = _as_float_array(self.mean, "mean")
        variance = _as_float_array(self.variance, "variance")
        if mean.ndim != 1 or variance.ndim != 1:
            raise ValueError("mean and variance must be 1-D vectors")
        if mean.shape != variance.shape:
            raise ValueError(
                f"mean/variance length mismatch: {mean.shape} vs {variance.shape}"
            )
        if mean.size < 1:
            raise ValueError("dimension must be >= 1")
        if np.any(variance < VARIANCE_FLOOR):
            raise ValueError(f"variance entries must be >= {VARIANCE_FLOOR}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GmmParams:
    """Parameters of one class-conditional Gaussian mixture.

    weights: (M,) nonnegative, summing to 1.
    means, variances: (M, D) stacked component parameters.
    responsibility_mode: SUM evaluates the full mixture, WINNER_TAKE_ALL
    keeps only the largest weighted component term.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    responsibility_mode: str = SUM

    def __post_init__(self):
        weights = _as_float_array(self.weights, "weights")
        means = _as_float_array(self.means, "means")
        variances = _as_float_array(self.variances, "variances")
        if weights.ndim != 1 or means.ndim != 2 or variances.ndim != 2:
            raise ValueError("weights must be (M,), means/variances (M, D)")
        m = weights.shape[0]
        if m < 1:
            raise ValueError("need at least one component")
        if means.shape[0] != m or variances.shape != means.shape:
            raise ValueError("component count mismatch between fields")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")
        if np.any(variances < VARIANCE_FLOOR):
            raise ValueError(f"variance entries must be >= {VARIANCE_FLOOR}")
        if self.responsibility_mode not in RESPONSIBILITY_MODES:
            raise ValueError(f"unknown responsibility mode {self.responsibility_mode!r}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> tuple[DiagGaussian, ...]:
        return tuple(
            DiagGaussian(self.means[m], self.variances[m])
            for m in range(self.n_components)
        )


def log_sum_exp(v) -> float:
    """Stable log(sum(exp(v))) for a nonempty vector.

    Returns -inf only when every entry is -inf.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("log_sum_exp requires a nonempty vector")
    hi = np.max(v)
    if hi == -np.inf:
        return -np.inf
    return float(hi + np.log(np.sum(np.exp(v - hi))))


def logsumexp_axis(a: np.ndarray, axis: int) -> np.ndarray:
    """Stable log-sum-exp along one axis of a matrix (internal helper)."""
    hi = np.max(a, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    out = np.squeeze(hi, axis=axis) + np.log(
        np.sum(np.exp(a - hi), axis=axis)
    )
    return out


def log_gaussian_diag(x, g: DiagGaussian):
    """Log-density of a diagonal Gaussian at x.

    x may be a single vector (D,) giving a scalar, or a batch (N, D)
    giving a length-N array.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.ndim != 2 or pts.shape[1] != g.dim:
        raise ValueError(f"input dimension {pts.shape[-1]} != Gaussian dimension {g.dim}")
    out = component_log_densities(pts, g.mean[None, :], g.variance[None, :])[:, 0]
    return float(out[0]) if single else out


def component_log_densities(
    features: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> np.ndarray:
    """Log N(x_n; mu_m, diag(var_m)) for every sample/component pair.

    features: (N, D); means, variances: (M, D). Returns (N, M).
    The quadratic term uses explicit differences (no expansion tricks) so
    that near-mean evaluations do not suffer cancellation.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or means.ndim != 2 or features.shape[1] != means.shape[1]:
        raise ValueError(
            f"shape mismatch: features {features.shape}, means {means.shape}"
        )
    d = features.shape[1]
    log_norm = -0.5 * (d * _LOG_2PI + np.sum(np.log(variances), axis=1))  # (M,)
    diff = features[:, None, :] - means[None, :, :]  # (N, M, D)
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)  # (N, M)
    return log_norm[None, :] - 0.5 * quad


def log_mixture_terms(
    features: np.ndarray, weights: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> np.ndarray:
    """Per-component terms ln w_m + ln N(x; mu_m, var_m), shape (N, M).

    Raw form: weights are used as given (no normalization), so callers can
    probe unnormalized mixtures.
    """
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w[None, :] + component_log_densities(features, means, variances)


def log_mixture(x, p: GmmParams):
    """Log mixture density at x under p, in the configured responsibility mode.

    SUM: logsumexp over weighted component terms. WINNER_TAKE_ALL: the
    largest weighted component term. x may be (D,) or (N, D).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[1] != p.dim:
        raise ValueError(f"input dimension {pts.shape[1]} != mixture dimension {p.dim}")
    terms = log_mixture_terms(pts, p.weights, p.means, p.variances)
    if p.responsibility_mode == SUM:
        out = logsumexp_axis(terms, axis=1)
    else:
        out = np.max(terms, axis=1)
    return float(out[0]) if single else out
