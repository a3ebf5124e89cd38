"""Closed-form optimum of the continuous, cost-free problem."""

from typing import NamedTuple

import numpy as np

from ..exceptions import ConfigError
from .spec import HoldingsTrajectory


class ContinuousOptimum(NamedTuple):
    trajectory: HoldingsTrajectory
    budget_residual: float


def step_gradient(omega_t, t, spec):
    """Gradient of the one-step energy ``h_t`` with respect to normalized weights."""
    return (
        -spec.mu[:, t]
        + spec.gamma * spec.sigma[t] @ omega_t
        + 2.0 * spec.rho * (omega_t.sum() - 1.0) * np.ones(spec.N)
    )


def continuous_optimum(spec):
    """Per-step stationary point ``((g/2) S_t + rho u u^T)^-1 (mu_t / 2 + rho u)``.

    Only defined without transaction costs, where steps decouple.  The budget
    holds only approximately; ``budget_residual`` is ``max_t |sum(w_t) - 1|``.
    """
    if spec.lam != 0 or spec.extensions.linear_cost is not None:
        raise ConfigError("continuous_optimum requires lambda = 0 (no transaction costs)")
    if spec.extensions.market_impact is not None:
        raise ConfigError("continuous_optimum does not support market impact")
    u = np.ones(spec.N)
    uu = np.outer(u, u)
    out = np.empty((spec.N, spec.N_t))
    for t in range(spec.N_t):
        A = 0.5 * spec.gamma * spec.sigma[t] + spec.rho * uu
        rhs = 0.5 * spec.mu[:, t] + spec.rho * u
        try:
            w = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            raise ConfigError(
                f"singular system at step {t}; increase rho or regularize sigma"
            ) from None
        if not np.all(np.isfinite(w)) or np.linalg.cond(A) > 1e14:
            raise ConfigError(
                f"ill-conditioned system at step {t}; increase rho or regularize sigma"
            )
        # one step of iterative refinement
        w = w + np.linalg.solve(A, rhs - A @ w)
        out[:, t] = w
    residual = float(np.max(np.abs(out.sum(axis=0) - 1.0)))
    # the unconstrained optimum may go short
    traj = HoldingsTrajectory(out, normalized=True, K=spec.K, allow_short=True)
    return ContinuousOptimum(traj, residual)
