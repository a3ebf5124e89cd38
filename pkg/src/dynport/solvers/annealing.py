"""Metropolis simulated annealing on QUBOs."""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .._validation import check_random_state
from ..exceptions import ConfigError
from .base import BaseSolver, SolutionSet, rank_candidates


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling schedule.

    Temperatures left as ``None`` are scaled to the instance: the initial
    temperature accepts a median single-flip uphill move with probability 1/2
    and the final one is ``1e-3`` of it.
    """

    initial_temperature: Optional[float] = None
    final_temperature: Optional[float] = None
    cooling: float = 0.9
    sweeps_per_temperature: int = 1
    restarts: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.cooling < 1:
            raise ConfigError("cooling factor must lie in (0, 1)")
        if self.sweeps_per_temperature < 1 or self.restarts < 1:
            raise ConfigError("sweeps_per_temperature and restarts must be >= 1")
        t0, t1 = self.initial_temperature, self.final_temperature
        if t0 is not None and t0 <= 0 or t1 is not None and t1 <= 0:
            raise ConfigError("temperatures must be positive")
        if t0 is not None and t1 is not None and t1 > t0:
            raise ConfigError("final temperature must not exceed the initial one")

    def temperatures(self, q, rng):
        t0, t1 = self.initial_temperature, self.final_temperature
        if t0 is None:
            t0 = _typical_flip(q, rng) / np.log(2.0)
            if t1 is not None:
                t0 = max(t0, t1)
        if t1 is None:
            t1 = 1e-3 * t0
        count = max(1, int(np.ceil(np.log(t1 / t0) / np.log(self.cooling))) + 1)
        return t0 * self.cooling ** np.arange(count)


def _typical_flip(q, rng, samples=64):
    n = q.n_variables
    X = rng.integers(0, 2, size=(samples, n)).astype(float)
    d = np.diag(q.Q)
    dE = (1 - 2 * X) * (d + 2 * (X @ q.Q - d * X))
    dE = np.abs(dE[dE != 0])
    return float(np.median(dE)) if dE.size else 1.0


def solve_annealing(q, schedule=AnnealSchedule(), callback=None):
    """Single-bit-flip Metropolis annealing, all restarts advanced in lockstep.

    Each flip costs ``O(N_tot)`` per restart through an incrementally updated
    local field ``Q x``.  ``callback(sweep, best_energy)`` is called after every
    sweep; a truthy return value stops the run early.
    """
    start = time.perf_counter()
    rng = check_random_state(schedule.seed)
    n = q.n_variables
    R = schedule.restarts
    Q = q.Q
    d = np.diag(Q).copy()
    temps = schedule.temperatures(q, rng)

    X = rng.integers(0, 2, size=(R, n)).astype(float)
    F = X @ Q
    E = np.einsum("ri,ri->r", X, F)
    best_E = E.copy()
    best_X = X.copy()
    sweeps = 0
    stopped = False
    for T in temps:
        for _ in range(schedule.sweeps_per_temperature):
            u = rng.random((n, R))
            for i in range(n):
                xi = X[:, i]
                dE = (1.0 - 2.0 * xi) * (d[i] + 2.0 * (F[:, i] - d[i] * xi))
                with np.errstate(over="ignore"):
                    accept = (dE <= 0) | (u[i] < np.exp(-dE / T))
                if not accept.any():
                    continue
                step = np.where(accept, 1.0 - 2.0 * xi, 0.0)
                X[:, i] += step
                F += step[:, None] * Q[i][None, :]
                E += np.where(accept, dE, 0.0)
            sweeps += 1
            improved = E < best_E
            if improved.any():
                best_E[improved] = E[improved]
                best_X[improved] = X[improved]
            if callback is not None and callback(sweeps, float(best_E.min() + q.offset)):
                stopped = True
                break
        if stopped:
            break

    bits = best_X.astype(np.uint8)
    entries = rank_candidates(bits, q.energy(bits))
    return SolutionSet(
        entries,
        "annealing",
        schedule.seed,
        time.perf_counter() - start,
        sweeps,
        {
            "restarts": R,
            "initial_temperature": float(temps[0]),
            "final_temperature": float(temps[-1]),
            "temperatures": len(temps),
            "stopped_early": stopped,
        },
    )


class AnnealingSolver(BaseSolver):
    """Estimator wrapper around :func:`solve_annealing`."""

    def __init__(
        self,
        initial_temperature=None,
        final_temperature=None,
        cooling=0.9,
        sweeps_per_temperature=1,
        restarts=100,
        seed=0,
    ):
        self.initial_temperature = initial_temperature
        self.final_temperature = final_temperature
        self.cooling = cooling
        self.sweeps_per_temperature = sweeps_per_temperature
        self.restarts = restarts
        self.seed = seed

    def schedule(self):
        return AnnealSchedule(**self.get_params())

    def solve(self, instance):
        return solve_annealing(instance, self.schedule())
