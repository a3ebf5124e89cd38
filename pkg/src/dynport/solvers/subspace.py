"""Low-energy subspace recombination.

Each rebalancing step is solved on its own (no transaction coupling) for a
short list of good portfolios; the full trajectory is then stitched together
by dynamic programming over the step chain, which is exact because the
transaction terms only couple neighbouring steps.
"""

import time
from typing import NamedTuple

import numpy as np

from ..exceptions import ConfigError
from ..problem.qubo import build_qubo
from ..problem.spec import (
    BitTrajectory,
    HoldingsTrajectory,
    decode,
    encode,
    evaluate_hamiltonian,
    optimal_ancillas,
    step_energy,
    transition_energy,
)
from .annealing import AnnealSchedule, solve_annealing
from .base import BaseSolver, SolutionEntry, SolutionSet
from .exhaustive import solve_exhaustive
from .mps import solve_mps


class StepCandidate(NamedTuple):
    """Integer holdings of one step and its uncoupled energy ``h_t``."""

    holdings: np.ndarray
    energy: float


def _inner_solve(q, inner, k, params, seed):
    params = dict(params or {})
    if inner == "exhaustive":
        return solve_exhaustive(q, top_k=k, **params)
    if inner == "annealing":
        params.setdefault("seed", seed)
        return solve_annealing(q, AnnealSchedule(**params))
    if inner == "mps":
        params.setdefault("seed", seed)
        return solve_mps(q, **params)
    if isinstance(inner, BaseSolver):
        return inner.solve(q)
    raise ConfigError(f"unknown inner solver {inner!r}")


def per_step_low_energy(spec, k=10, inner="exhaustive", inner_params=None, seed=0):
    """The ``k`` lowest-energy portfolios of every single-step instance.

    Returns a list of ``N_t`` lists of :class:`StepCandidate`, each ascending
    in energy.  Stochastic inner solvers get seed ``seed + t`` at step ``t``
    and may return fewer than ``k`` distinct portfolios.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    out = []
    for t in range(spec.N_t):
        step = spec.single_step(t)
        sols = _inner_solve(build_qubo(step), inner, k, inner_params, seed + t)
        cands = []
        for entry in sols.entries[:k]:
            units = decode(BitTrajectory.from_flat(entry.bits, step), step).holdings[:, 0]
            cands.append(StepCandidate(units.astype(np.int64), entry.energy))
        out.append(cands)
    return out


def _dedupe(cands):
    seen, out = set(), []
    for c in cands:
        h = np.asarray(c.holdings if isinstance(c, StepCandidate) else c, dtype=float)
        key = tuple(h)
        if key not in seen:
            seen.add(key)
            out.append(h)
    return out


def _trajectory_bits(units, spec):
    bits = encode(units, spec)
    if spec.n_ancillas:
        omega = np.column_stack([spec.initial_holdings, units / spec.K])
        y = np.column_stack(
            [optimal_ancillas(omega[:, t + 1] - omega[:, t], spec, t) for t in range(spec.N_t)]
        )
        bits = BitTrajectory(bits.bits, y)
    return bits.flat()


def recombine(candidates, spec, top_k=None):
    """Cheapest trajectory taking one candidate per step, under the full Hamiltonian.

    Exact dynamic programming in ``O(N_t k**2)``.  The result holds the best
    trajectory ending in each last-step candidate (at most ``top_k``), ranked,
    so ``result.best`` is the global optimum over all ``k**N_t`` combinations.
    """
    start = time.perf_counter()
    if len(candidates) != spec.N_t:
        raise ConfigError(f"need candidates for {spec.N_t} steps, got {len(candidates)}")
    steps = [_dedupe(c) for c in candidates]
    for t, c in enumerate(steps):
        if not c:
            raise ConfigError(f"step {t} has no candidates")
        for h in c:
            if h.shape != (spec.N,):
                raise ConfigError(f"step {t} candidate has shape {h.shape}, expected ({spec.N},)")

    omegas = [np.array(c) / spec.K for c in steps]
    node = [np.array([sum(step_energy(w, t, spec)) for w in omegas[t]]) for t in range(spec.N_t)]

    def edge(prev, cur, t):
        return sum(transition_energy(prev, cur, t, spec))

    value = node[0] + np.array([edge(spec.initial_holdings, w, 0) for w in omegas[0]])
    back = []
    for t in range(1, spec.N_t):
        trans = np.array([[edge(p, w, t) for w in omegas[t]] for p in omegas[t - 1]])
        total = value[:, None] + trans
        arg = np.argmin(total, axis=0)  # first minimum, so ties go to the earlier candidate
        back.append(arg)
        value = total[arg, np.arange(len(omegas[t]))] + node[t]

    entries = []
    for end in np.argsort(value, kind="stable")[: top_k or len(value)]:
        path = [int(end)]
        for arg in reversed(back):
            path.append(int(arg[path[-1]]))
        path.reverse()
        units = np.column_stack([steps[t][j] for t, j in enumerate(path)])
        bits = _trajectory_bits(units, spec)
        energy = evaluate_hamiltonian(BitTrajectory.from_flat(bits, spec), spec).total
        entries.append(SolutionEntry(bits, energy))
    entries.sort(key=lambda e: (e.energy, e.bitstring()))
    return SolutionSet(
        entries,
        "subspace",
        None,
        time.perf_counter() - start,
        spec.N_t,
        {"candidates_per_step": [len(c) for c in steps]},
    )


def brute_force_recombine(candidates, spec):
    """Reference search over every combination; only for small ``k**N_t``."""
    import itertools

    steps = [_dedupe(c) for c in candidates]
    best = None
    for combo in itertools.product(*steps):
        units = np.column_stack(combo)
        e = evaluate_hamiltonian(HoldingsTrajectory(units, K=spec.K), spec).total
        if best is None or e < best[0]:
            best = (e, units)
    return best


class LowEnergySubspaceSolver(BaseSolver):
    """Per-step shortlists of ``k`` portfolios recombined by dynamic programming.

    ``fit`` takes the :class:`~dynport.problem.ProblemSpec` itself, since the
    per-step instances are built from it.
    """

    def __init__(self, k=10, inner="exhaustive", inner_params=None, seed=0, top_k=10):
        self.k = k
        self.inner = inner
        self.inner_params = inner_params
        self.seed = seed
        self.top_k = top_k

    def solve(self, spec):
        start = time.perf_counter()
        cands = per_step_low_energy(spec, self.k, self.inner, self.inner_params, self.seed)
        result = recombine(cands, spec, self.top_k)
        result.seed = self.seed
        result.wall_time = time.perf_counter() - start
        result.info["inner"] = self.inner if isinstance(self.inner, str) else type(self.inner).__name__
        result.info["k"] = self.k
        return result
