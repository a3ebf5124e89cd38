"""Brute-force enumeration of all bit configurations."""

import time

import numpy as np

from ..exceptions import ConfigError, SolverCapError
from ..problem.hubo import HuboPolynomial
from ..problem.qubo import QuboMatrix
from .base import BaseSolver, SolutionSet, rank_candidates

DEFAULT_MAX_VARIABLES = 24
_CHUNK_STATES = 1 << 18


def _bit_table(n):
    """All ``2**n`` states of ``n`` bits, row ``s`` with the first bit most significant."""
    s = np.arange(2**n, dtype=np.int64)
    return ((s[:, None] >> (n - 1 - np.arange(n))) & 1).astype(np.uint8)


def _budget_weights(spec, n_variables):
    """``[n_variables, N_t]`` weights such that ``x @ W`` gives per-step unit totals."""
    W = np.zeros((n_variables, spec.N_t))
    for n in range(spec.N):
        for t in range(spec.N_t):
            for q in range(spec.N_q):
                W[(n * spec.N_t + t) * spec.N_q + q, t] = 2**q
    return W


def _merge(pool_e, pool_s, e, s, k):
    if len(e) > k:
        kth = np.partition(e, k - 1)[k - 1]
        keep = e <= kth
        e, s = e[keep], s[keep]
    e = np.concatenate([pool_e, e])
    s = np.concatenate([pool_s, s])
    order = np.lexsort((s, e))[:k]
    return e[order], s[order]


def solve_exhaustive(
    instance, mode="all", top_k=10, spec=None, max_variables=DEFAULT_MAX_VARIABLES
):
    """Enumerate every state of a QUBO or HUBO and keep the ``top_k`` lowest.

    ``mode="budget_constrained"`` (requires ``spec``) only considers states
    whose integer holdings sum to ``K`` at every step.  Ties are broken by the
    lexicographically smallest bit string.
    """
    start = time.perf_counter()
    if mode not in ("all", "budget_constrained"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "budget_constrained" and spec is None:
        raise ConfigError("budget_constrained mode needs the ProblemSpec")
    n = instance.n_variables
    if n > max_variables:
        raise SolverCapError(
            f"exhaustive search over {n} variables means 2^{n} states; "
            f"the cap is {max_variables} variables"
        )
    if top_k < 1:
        raise ConfigError("top_k must be >= 1")
    W = _budget_weights(spec, n) if mode == "budget_constrained" else None

    pool_e = np.zeros(0)
    pool_s = np.zeros(0, dtype=np.int64)
    if isinstance(instance, QuboMatrix):
        n_hi = n // 2
        n_lo = n - n_hi
        Q = instance.Q
        lo_bits = _bit_table(n_lo).astype(float)
        hi_bits = _bit_table(n_hi).astype(float)
        Q_ll = Q[n_hi:, n_hi:]
        Q_hh = Q[:n_hi, :n_hi]
        e_lo = np.einsum("ki,ij,kj->k", lo_bits, Q_ll, lo_bits)
        e_hi = np.einsum("ki,ij,kj->k", hi_bits, Q_hh, hi_bits) + instance.offset
        cross = 2.0 * hi_bits @ Q[:n_hi, n_hi:]
        if W is not None:
            tot_lo = lo_bits @ W[n_hi:]
            tot_hi = hi_bits @ W[:n_hi]
        rows = max(1, _CHUNK_STATES >> n_lo)
        for h0 in range(0, 2**n_hi, rows):
            h1 = min(2**n_hi, h0 + rows)
            E = e_hi[h0:h1, None] + e_lo[None, :] + cross[h0:h1] @ lo_bits.T
            s = (np.arange(h0, h1, dtype=np.int64)[:, None] << n_lo) + np.arange(
                2**n_lo, dtype=np.int64
            )
            if W is not None:
                ok = np.all(
                    tot_hi[h0:h1, None, :] + tot_lo[None, :, :] == spec.K, axis=2
                )
                E, s = E[ok], s[ok]
            pool_e, pool_s = _merge(pool_e, pool_s, E.ravel(), s.ravel(), top_k)
    elif isinstance(instance, HuboPolynomial):
        total = 2**n
        for s0 in range(0, total, _CHUNK_STATES):
            s = np.arange(s0, min(total, s0 + _CHUNK_STATES), dtype=np.int64)
            X = ((s[:, None] >> (n - 1 - np.arange(n))) & 1).astype(np.uint8)
            if W is not None:
                ok = np.all(X @ W == spec.K, axis=1)
                X, s = X[ok], s[ok]
                if not len(s):
                    continue
            pool_e, pool_s = _merge(pool_e, pool_s, instance.energy(X), s, top_k)
    else:
        raise ConfigError(f"cannot enumerate {type(instance).__name__}")

    bits = ((pool_s[:, None] >> (n - 1 - np.arange(n))) & 1).astype(np.uint8)
    # re-score exactly so recorded energies match instance.energy()
    energies = instance.energy(bits) if len(bits) else np.zeros(0)
    entries = rank_candidates(bits, energies, top_k) if len(bits) else []
    return SolutionSet(
        entries,
        "exhaustive",
        None,
        time.perf_counter() - start,
        1,
        {"mode": mode, "states": 2**n},
    )


class ExhaustiveSolver(BaseSolver):
    """Estimator wrapper around :func:`solve_exhaustive`.

    ``fit`` takes a :class:`QuboMatrix` or :class:`HuboPolynomial`.
    """

    def __init__(self, top_k=10, mode="all", spec=None, max_variables=DEFAULT_MAX_VARIABLES):
        self.top_k = top_k
        self.mode = mode
        self.spec = spec
        self.max_variables = max_variables

    def solve(self, instance):
        return solve_exhaustive(instance, self.mode, self.top_k, self.spec, self.max_variables)
