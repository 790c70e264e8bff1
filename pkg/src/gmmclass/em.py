"""EM optimization of per-class Gaussian mixtures.

Two E-step variants: the classic posterior responsibilities, and an
equipartition-constrained assignment obtained from the entropic transport
solver. M-steps use the standard weighted moment updates; successive
estimates are blended with a momentum coefficient so the mixture tracks a
slowly evolving feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sinkhorn
from .density import (
    SUM,
    VARIANCE_FLOOR,
    GmmParams,
    log_mixture_terms,
    logsumexp_axis,
)

VANILLA = "vanilla"
SINKHORN = "sinkhorn"
EM_VARIANTS = (VANILLA, SINKHORN)

# A component whose soft mass falls below this fraction of its equipartition
# share N/M is considered empty and gets reinitialized.
EMPTY_MASS_FRACTION = 1e-3


@dataclass(frozen=True)
class EmConfig:
    variant: str = SINKHORN
    loops_per_iteration: int = 1
    momentum_tau: float = 0.999
    epsilon: float = sinkhorn.DEFAULT_EPSILON
    variance_floor: float = VARIANCE_FLOOR
    sinkhorn_max_iters: int = sinkhorn.DEFAULT_MAX_ITERS
    sinkhorn_tol: float = sinkhorn.DEFAULT_TOL

    def __post_init__(self):
        if self.variant not in EM_VARIANTS:
            raise ValueError(f"unknown EM variant {self.variant!r}")
        if self.loops_per_iteration < 1:
            raise ValueError("loops_per_iteration must be >= 1")
        if not 0.0 <= self.momentum_tau <= 1.0:
            raise ValueError("momentum_tau must lie in [0, 1]")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.variance_floor < VARIANCE_FLOOR:
            raise ValueError(f"variance_floor must be >= {VARIANCE_FLOOR}")


@dataclass
class EmResult:
    """Outcome of one em_loop call."""

    params: GmmParams
    log_likelihood: float  # post-update full-mixture log-likelihood, summed
    events: list[str] = field(default_factory=list)
    converged: bool = True  # False if any Sinkhorn solve hit max_iters


def mixture_log_likelihood(features: np.ndarray, params: GmmParams) -> float:
    """Sum over samples of the full-mixture log-density (the EM objective).

    Always uses the sum over components, independent of the classifier-side
    responsibility mode stored on params.
    """
    features = np.asarray(features, dtype=np.float64)
    terms = log_mixture_terms(features, params.weights, params.means, params.variances)
    return float(np.sum(logsumexp_axis(terms, axis=1)))


def e_step_vanilla(features: np.ndarray, params: GmmParams) -> np.ndarray:
    """Posterior responsibilities q(n, m) ~ pi_m N(x_n; mu_m, var_m).

    Computed in log space and normalized per row; rows sum to 1 exactly up
    to rounding.
    """
    features = np.asarray(features, dtype=np.float64)
    terms = log_mixture_terms(features, params.weights, params.means, params.variances)
    log_q = terms - logsumexp_axis(terms, axis=1)[:, None]
    return np.exp(log_q)


def e_step_sinkhorn(
    features: np.ndarray,
    params: GmmParams,
    epsilon: float = sinkhorn.DEFAULT_EPSILON,
    max_iters: int = sinkhorn.DEFAULT_MAX_ITERS,
    tol: float = sinkhorn.DEFAULT_TOL,
) -> tuple[np.ndarray, bool]:
    """Equipartition-constrained responsibilities via the transport solver.

    Returns (q, converged). Rows of q sum to 1; column sums equal N/M within
    the solver tolerance when converged. The solver's non-convergence is
    reported, not raised.
    """
    cost = sinkhorn.build_cost(features, params)
    plan = sinkhorn.solve(cost, epsilon=epsilon, max_iters=max_iters, tol=tol)
    return plan.entries, plan.converged


def m_step(
    features: np.ndarray,
    q: np.ndarray,
    floor: float = VARIANCE_FLOOR,
    uniform_weights: bool = False,
    responsibility_mode: str = SUM,
) -> tuple[GmmParams, list[int]]:
    """Weighted moment updates from responsibilities.

    Returns the estimated parameters together with the indices of empty
    components (mass below EMPTY_MASS_FRACTION * N/M); those entries hold
    placeholder values and the caller is expected to reinitialize them.
    With uniform_weights the mixture weights are pinned to 1/M.
    """
    features = np.asarray(features, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if features.ndim != 2 or q.ndim != 2 or features.shape[0] != q.shape[0]:
        raise ValueError(
            f"shape mismatch: features {features.shape}, responsibilities {q.shape}"
        )
    n, m = q.shape
    mass = q.sum(axis=0)  # (M,)
    empty = [int(j) for j in np.nonzero(mass < EMPTY_MASS_FRACTION * n / m)[0]]

    safe_mass = np.maximum(mass, 1e-300)
    means = (q.T @ features) / safe_mass[:, None]
    diff = features[:, None, :] - means[None, :, :]
    variances = np.einsum("nm,nmd->md", q, diff * diff) / safe_mass[:, None]
    variances = np.maximum(variances, floor)

    if uniform_weights:
        weights = np.full(m, 1.0 / m)
    else:
        weights = mass / n
        weights = weights / weights.sum()

    est = GmmParams(
        weights=weights,
        means=means,
        variances=variances,
        responsibility_mode=responsibility_mode,
    )
    return est, empty


def f_objective(features: np.ndarray, params: GmmParams, q: np.ndarray) -> float:
    """Expected complete-data log-likelihood under q plus the entropy of q.

    This is the EM surrogate: it lower-bounds the data log-likelihood and
    touches it exactly when q is the vanilla E-step posterior. 0*ln(0) is
    taken as 0.
    """
    features = np.asarray(features, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    terms = log_mixture_terms(features, params.weights, params.means, params.variances)
    if terms.shape != q.shape:
        raise ValueError(f"responsibility shape {q.shape} != term shape {terms.shape}")
    expected = float(np.sum(q * terms))
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0.0, q * np.log(q), 0.0)
    entropy = -float(np.sum(plogp))
    return expected + entropy


def momentum_blend(old: GmmParams, estimated: GmmParams, tau: float) -> GmmParams:
    """Convex blend tau*old + (1-tau)*estimated, elementwise on raw parameters.

    Weights are renormalized and variances re-floored afterwards; tau=1
    returns old, tau=0 returns estimated.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if old.means.shape != estimated.means.shape:
        raise ValueError("parameter shapes do not match")
    if old.responsibility_mode != estimated.responsibility_mode:
        raise ValueError("responsibility modes do not match")
    weights = tau * old.weights + (1.0 - tau) * estimated.weights
    weights = weights / weights.sum()
    means = tau * old.means + (1.0 - tau) * estimated.means
    variances = np.maximum(
        tau * old.variances + (1.0 - tau) * estimated.variances, VARIANCE_FLOOR
    )
    return GmmParams(
        weights=weights,
        means=means,
        variances=variances,
        responsibility_mode=old.responsibility_mode,
    )


def init_gmm(
    features: np.ndarray,
    n_components: int,
    responsibility_mode: str = SUM,
    floor: float = VARIANCE_FLOOR,
    rng: np.random.Generator | None = None,
) -> GmmParams:
    """Seed a mixture from data: means are random samples, variances global.

    Means are n_components distinct rows of features (with replacement only
    when there are fewer rows than components); variances are the per
    dimension variance of the whole working set; weights are uniform.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("need at least one feature row to initialize")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = features.shape[0]
    idx = rng.choice(n, size=n_components, replace=n < n_components)
    means = features[idx].copy()
    if n >= 2:
        global_var = np.maximum(features.var(axis=0), floor)
    else:
        global_var = np.ones(features.shape[1])
    variances = np.tile(global_var, (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)
    return GmmParams(
        weights=weights,
        means=means,
        variances=variances,
        responsibility_mode=responsibility_mode,
    )


def em_loop(
    features: np.ndarray,
    params: GmmParams,
    config: EmConfig,
    rng: np.random.Generator | None = None,
) -> EmResult:
    """Run loops_per_iteration alternations of E-step, M-step, momentum blend.

    Empty components are reinitialized (mean drawn from the working set,
    variance reset to the global per-dimension variance) and bypass the
    momentum blend for that loop; each such event is recorded. The reported
    log-likelihood is evaluated after the final update.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a nonempty (N, D) matrix")
    rng = rng if rng is not None else np.random.default_rng(0)
    events: list[str] = []
    converged = True
    n = features.shape[0]
    if config.variant == SINKHORN and n < params.n_components:
        events.append(f"fewer samples ({n}) than components ({params.n_components})")

    for loop in range(config.loops_per_iteration):
        if config.variant == VANILLA:
            q = e_step_vanilla(features, params)
        else:
            q, ok = e_step_sinkhorn(
                features,
                params,
                epsilon=config.epsilon,
                max_iters=config.sinkhorn_max_iters,
                tol=config.sinkhorn_tol,
            )
            if not ok:
                converged = False
                events.append(f"sinkhorn did not converge in loop {loop}")
        est, empty = m_step(
            features,
            q,
            floor=config.variance_floor,
            uniform_weights=config.variant == SINKHORN,
            responsibility_mode=params.responsibility_mode,
        )
        blended = momentum_blend(params, est, config.momentum_tau)
        if empty:
            means = blended.means.copy()
            variances = blended.variances.copy()
            if n >= 2:
                global_var = np.maximum(features.var(axis=0), config.variance_floor)
            else:
                global_var = np.ones(features.shape[1])
            for j in empty:
                means[j] = features[rng.integers(n)]
                variances[j] = global_var
                events.append(f"reinitialized empty component {j} in loop {loop}")
            blended = GmmParams(
                weights=blended.weights,
                means=means,
                variances=variances,
                responsibility_mode=blended.responsibility_mode,
            )
        params = blended

    return EmResult(
        params=params,
        log_likelihood=mixture_log_likelihood(features, params),
        events=events,
        converged=converged,
    )
