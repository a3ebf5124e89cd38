"""Seeded synthetic data: factor-driven price panels and random problem instances."""

import numpy as np
from scipy.signal import lfilter

from ._validation import check_random_state
from .market_data import PricePanel
from .problem.spec import Extensions, ProblemSpec


def business_days(start, count):
    """``count`` consecutive weekdays starting at (or after) ``start``."""
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward")


def synthetic_prices(
    n_groups=7,
    group_size=4,
    n_quiet=24,
    years=8,
    *,
    correlation=0.9,
    group_volatility=0.012,
    reversion=0.9,
    quiet_volatility=0.004,
    quiet_drift=-3e-4,
    start="2010-01-04",
    seed=0,
):
    """Geometric random walk prices with block cross-correlation.

    Assets in the same group share a random-walk factor; ``correlation`` is
    the fraction of each member's daily return variance explained by it.  The
    rest is a mean-reverting AR(1) deviation of the log price with
    coefficient ``reversion``, so members share one long-run trend.  Each
    group gets its own drift.  The ``n_quiet`` extra assets have low
    volatility and negative drift, so they are exactly the ones a sub-average
    variance-and-return filter removes.  The defaults give 52 assets of which
    28 survive that filter, in 7 clearly separated groups.
    """
    rng = check_random_state(seed)
    if not 0 <= correlation <= 1:
        raise ValueError("correlation must lie in [0, 1]")
    n_days = int(round(261 * years)) + 1
    dates = business_days(start, n_days)
    steps = n_days - 1

    drifts = np.linspace(-2e-4, 1.2e-3, n_groups)
    rng.shuffle(drifts)
    factor = rng.standard_normal((n_groups, steps))
    rets = []
    for g in range(n_groups):
        # stationary AR(1) level whose increments have variance (1 - correlation) vol^2
        innov = np.sqrt((1 - correlation) * (1 + reversion) / 2) * group_volatility
        noise = innov * rng.standard_normal((group_size, steps + 1))
        noise[:, 0] = 0.0  # deviation starts at zero on the first date
        idio = np.diff(lfilter([1.0], [1.0, -reversion], noise, axis=1), axis=1)
        rets.append(drifts[g] + group_volatility * np.sqrt(correlation) * factor[g] + idio)
    rets.append(quiet_drift + quiet_volatility * rng.standard_normal((n_quiet, steps)))
    rets = np.vstack(rets)
    start_price = rng.uniform(20.0, 200.0, size=(rets.shape[0], 1))
    log_p = np.log(start_price) + np.concatenate(
        [np.zeros((rets.shape[0], 1)), np.cumsum(rets, axis=1)], axis=1
    )
    ids = [f"G{g}_{m}" for g in range(n_groups) for m in range(group_size)]
    ids += [f"Q{m}" for m in range(n_quiet)]
    return PricePanel(ids, dates, np.exp(log_p))


def random_covariances(N, N_t, rng, scale=1.0):
    """``N_t`` random PSD matrices ``A A^T / N``."""
    A = rng.standard_normal((N_t, N, N))
    return scale * np.einsum("tij,tkj->tik", A, A) / N


def random_spec(rng=None, N=3, N_t=2, N_q=1, K=None, *, gamma=None, lam=None, rho=None,
                mu_scale=1.0, sigma_scale=1.0, extensions=None):
    """Random instance; unspecified ``gamma``/``lam``/``rho`` are drawn from ``(0, 5]``.

    ``rho="auto"`` keeps the default budget multiplier.
    """
    rng = check_random_state(rng)
    draw = lambda: float(rng.uniform(0.0, 5.0)) or 5.0  # noqa: E731
    if K is None:
        K = int(rng.integers(1, N * (2**N_q - 1) + 1))
    mu = mu_scale * rng.standard_normal((N, N_t))
    sigma = random_covariances(N, N_t, rng, sigma_scale)
    return ProblemSpec(
        N, N_t, N_q, K, mu, sigma,
        gamma=draw() if gamma is None else gamma,
        lam=draw() if lam is None else lam,
        rho=None if rho == "auto" else (draw() if rho is None else rho),
        extensions=extensions or Extensions(),
    )
