"""Solution containers shared by all solvers."""

import json
import os
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator

from ..problem.spec import BitTrajectory, decode


class SolutionEntry(NamedTuple):
    bits: np.ndarray
    energy: float

    def bitstring(self):
        return "".join("1" if b else "0" for b in self.bits)


def rank_candidates(bits, energies, top_k=None):
    """Deduplicate rows of ``bits`` and sort by energy, then by bit string."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    energies = np.asarray(energies, dtype=float).ravel()
    if not len(bits) or bits.shape[1] == 0:
        if len(bits):
            return [SolutionEntry(bits[0].copy(), float(energies.min()))]
        return []
    _, first = np.unique(bits, axis=0, return_index=True)
    bits, energies = bits[first], energies[first]
    order = np.lexsort(tuple(bits[:, ::-1].T) + (energies,))
    if top_k is not None:
        order = order[:top_k]
    return [SolutionEntry(bits[i].copy(), float(energies[i])) for i in order]


@dataclass
class SolutionSet:
    """Ranked, deduplicated low-energy configurations with solver metadata."""

    entries: list
    solver: str
    seed: object = None
    wall_time: float = 0.0
    iterations: int = 0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def best(self):
        return self.entries[0] if self.entries else None

    @property
    def energies(self):
        return np.array([e.energy for e in self.entries])

    def ground_states(self, rtol=1e-12):
        """All entries tied with the best energy."""
        if not self.entries:
            return []
        e0 = self.entries[0].energy
        tol = rtol * max(1.0, abs(e0))
        return [e for e in self.entries if e.energy - e0 <= tol]

    def to_json(self, spec=None, include_timing=True):
        """JSON document; holdings are included when ``spec`` is given.

        ``include_timing=False`` writes ``wall_time_s: null`` so that repeated
        runs produce byte-identical files.
        """
        entries = []
        for e in self.entries:
            item = {"bits": e.bitstring(), "energy": e.energy}
            if spec is not None:
                traj = BitTrajectory.from_flat(e.bits, spec)
                item["holdings"] = decode(traj, spec).holdings.astype(int).tolist()
            entries.append(item)
        return {
            "solver": self.solver,
            "seed": self.seed,
            "wall_time_s": self.wall_time if include_timing else None,
            "entries": entries,
        }

    def dump(self, path, spec=None, include_timing=True):
        text = json.dumps(self.to_json(spec, include_timing), indent=1, sort_keys=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")

    @classmethod
    def from_json(cls, data):
        if isinstance(data, (str, os.PathLike)):
            with open(data, encoding="utf-8") as fh:
                data = json.load(fh)
        entries = [
            SolutionEntry(np.array([int(c) for c in item["bits"]], dtype=np.uint8), item["energy"])
            for item in data["entries"]
        ]
        return cls(entries, data["solver"], data.get("seed"), data.get("wall_time_s") or 0.0)


class SolverMixin:
    """``fit`` stores the :class:`SolutionSet` from ``solve`` in ``solutions_``."""

    def fit(self, instance, y=None):
        self.solutions_ = self.solve(instance)
        best = self.solutions_.best
        self.best_bits_ = None if best is None else best.bits
        self.best_energy_ = None if best is None else best.energy
        return self

    def predict(self, instance=None):
        """Best bit vector found by the last ``fit``."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "solutions_")
        return self.best_bits_


class BaseSolver(SolverMixin, BaseEstimator):
    pass
