"""Ground-state search for QUBO/HUBO portfolio instances."""

from .annealing import AnnealingSolver, AnnealSchedule, solve_annealing
from .base import SolutionEntry, SolutionSet, rank_candidates
from .exhaustive import ExhaustiveSolver, solve_exhaustive
from .mps import Mps, MpsSolver, site_ordering, solve_mps
from .subspace import (
    LowEnergySubspaceSolver,
    StepCandidate,
    brute_force_recombine,
    per_step_low_energy,
    recombine,
)

__all__ = [
    "AnnealSchedule",
    "AnnealingSolver",
    "ExhaustiveSolver",
    "LowEnergySubspaceSolver",
    "Mps",
    "MpsSolver",
    "SolutionEntry",
    "SolutionSet",
    "StepCandidate",
    "brute_force_recombine",
    "per_step_low_energy",
    "rank_candidates",
    "recombine",
    "site_ordering",
    "solve_annealing",
    "solve_exhaustive",
    "solve_mps",
]
