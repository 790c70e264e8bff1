"""Entropy-regularized optimal transport with equipartition column marginals.

Solves for a soft assignment of N samples to M mixture components where each
row carries unit mass and each component must receive exactly N/M mass.
Iterations run entirely in the log domain: with epsilon around 0.05 and cost
magnitudes in the hundreds, the naive kernel exp(-cost/eps) underflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import GmmParams, component_log_densities

DEFAULT_EPSILON = 0.05
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6

# Break off when the column violation shrank by less than 2% over this many
# iterations: with small epsilon and widely spread costs the contraction
# factor is numerically 1, so waiting out max_iters is futile.
STALL_WINDOW = 10
STALL_RATIO = 0.98


@dataclass(frozen=True)
class TransportPlan:
    """Soft assignment matrix with unit row mass and N/M column mass.

    converged is False when the solver hit max_iters before the column
    marginals came within tolerance; callers decide how to proceed.
    """

    entries: np.ndarray  # (N, M), nonnegative
    converged: bool
    iterations: int
    max_violation: float  # relative column-marginal violation at exit

    @property
    def n_samples(self) -> int:
        return self.entries.shape[0]

    @property
    def n_components(self) -> int:
        return self.entries.shape[1]


def build_cost(features: np.ndarray, params: GmmParams) -> np.ndarray:
    """Transport cost matrix: entry (n, m) = -log N(x_n; mu_m, var_m).

    Mixture weights are deliberately excluded; the equipartition column
    constraint plays the role of a uniform component prior.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be (N, D)")
    return -component_log_densities(features, params.means, params.variances)


def solve(
    cost: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
) -> TransportPlan:
    """Log-domain Sinkhorn-Knopp for (unit rows, N/M columns) marginals.

    Alternates column and row scalings of K = exp(-cost/epsilon); the row
    scaling runs last so returned rows sum to 1 to machine precision, and
    convergence is judged on the relative column-marginal violation.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a nonempty (N, M) matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    n, m = cost.shape
    col_target = n / m
    log_col_target = np.log(col_target)

    log_k = -cost / epsilon
    log_v = np.zeros(m)

    # Each pass: row scaling makes rows sum to 1 exactly, then the column
    # log-sums serve both as the violation measure and as the next column
    # scaling correction.
    converged = False
    history: list[float] = []
    log_q = log_k
    for iterations in range(1, max_iters + 1):
        scaled = log_k + log_v[None, :]
        hi = scaled.max(axis=1, keepdims=True)
        log_u = -(hi[:, 0] + np.log(np.exp(scaled - hi).sum(axis=1)))
        log_q = scaled + log_u[:, None]
        hi0 = log_q.max(axis=0)
        log_col = hi0 + np.log(np.exp(log_q - hi0[None, :]).sum(axis=0))
        violation = float(np.max(np.abs(np.exp(log_col) - col_target)) / col_target)
        history.append(violation)
        if violation <= tol:
            converged = True
            break
        if (
            len(history) > STALL_WINDOW
            and violation > STALL_RATIO * history[-1 - STALL_WINDOW]
        ):
            break
        log_v = log_v + log_col_target - log_col

    return TransportPlan(
        entries=np.exp(log_q),
        converged=converged,
        iterations=iterations,
        max_violation=history[-1],
    )
