"""Optimization instance and its Hamiltonian, QUBO, Ising and HUBO forms."""

from .continuous import ContinuousOptimum, continuous_optimum, step_gradient
from .hubo import HuboPolynomial, build_10_5_40_hubo, hubo_assignment
from .qubo import (
    IsingModel,
    QuboMatrix,
    bits_to_spins,
    build_qubo,
    qubo_to_ising,
    read_qubo,
    write_qubo,
)
from .spec import (
    PROFILES,
    BitTrajectory,
    Extensions,
    HamiltonianValue,
    HoldingsTrajectory,
    ProblemSpec,
    decode,
    default_rho,
    dumps_canonical,
    encode,
    evaluate_hamiltonian,
    optimal_ancillas,
)

__all__ = [
    "PROFILES",
    "BitTrajectory",
    "ContinuousOptimum",
    "Extensions",
    "HamiltonianValue",
    "HoldingsTrajectory",
    "HuboPolynomial",
    "IsingModel",
    "ProblemSpec",
    "QuboMatrix",
    "bits_to_spins",
    "build_10_5_40_hubo",
    "build_qubo",
    "continuous_optimum",
    "decode",
    "default_rho",
    "dumps_canonical",
    "encode",
    "evaluate_hamiltonian",
    "hubo_assignment",
    "optimal_ancillas",
    "qubo_to_ising",
    "read_qubo",
    "step_gradient",
    "write_qubo",
]
