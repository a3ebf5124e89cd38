"""Financial figures of merit for trading trajectories and solution landscapes."""

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ConfigError
from .problem.spec import (
    BitTrajectory,
    HoldingsTrajectory,
    decode,
    evaluate_hamiltonian,
)

LANDSCAPE_COLUMNS = ("T", "E", "C", "R", "TC", "P", "SR")


@dataclass(frozen=True)
class TrajectoryReport:
    """Scores of one trajectory.

    ``risk`` is the summed portfolio variance ``sum_t w_t' S_t w_t`` (the
    Sharpe denominator is its square root); ``risk_hamiltonian`` is the
    ``gamma / 2`` weighted term that enters the energy.  When ``risk == 0``
    the Sharpe ratio is reported as 0 with ``sharpe_degenerate`` set.
    """

    energy: float
    returns: float
    risk: float
    risk_hamiltonian: float
    transaction_cost: float
    profit: float
    sharpe: float
    sharpe_degenerate: bool
    budget_residual: float

    def to_dict(self):
        return asdict(self)


def _omega(traj, spec):
    if isinstance(traj, BitTrajectory):
        return decode(traj, spec).omega(spec.K)
    if isinstance(traj, HoldingsTrajectory):
        return traj.omega(spec.K)
    # bare arrays are taken as normalized weights
    return np.asarray(traj, dtype=float)


def score(traj, spec):
    """Returns, risk, costs, profit, Sharpe ratio and budget residual of a trajectory.

    ``traj`` is a :class:`HoldingsTrajectory` (units are divided by ``K``),
    a :class:`BitTrajectory`, or an ``[N, N_t]`` array of normalized weights.
    Transaction costs follow the cost model of ``spec``: ``sum lam (dw)**2``
    for the parabolic model, ``sum nu |dw|`` for the exact linear one, with
    the first trade measured from the initial holdings.
    """
    omega = _omega(traj, spec)
    if omega.shape != (spec.N, spec.N_t):
        raise ConfigError(f"trajectory shape {omega.shape} does not match ({spec.N}, {spec.N_t})")
    returns = float(np.einsum("nt,nt->", spec.mu, omega))
    risk = float(np.einsum("it,tij,jt->", omega, spec.sigma, omega))
    delta = np.diff(np.column_stack([spec.initial_holdings, omega]), axis=1)
    nu = spec.extensions.linear_cost
    if nu is not None:
        cost = float(np.sum(nu * np.abs(delta)))
    else:
        cost = float(np.sum(spec.cost_vector[:, None] * delta**2))
    if risk > 0:
        sharpe, degenerate = returns / np.sqrt(risk), False
    else:
        sharpe, degenerate = 0.0, True
    source = traj if isinstance(traj, BitTrajectory) else HoldingsTrajectory(omega, True, spec.K, True)
    energy = evaluate_hamiltonian(source, spec).total
    return TrajectoryReport(
        energy=energy,
        returns=returns,
        risk=risk,
        risk_hamiltonian=0.5 * spec.gamma * risk,
        transaction_cost=cost,
        profit=returns - cost,
        sharpe=float(sharpe),
        sharpe_degenerate=degenerate,
        budget_residual=float(np.max(np.abs(omega.sum(axis=0) - 1.0))),
    )


class LandscapeTable:
    """Rows ``(T, E, C, R, TC, P, SR)``, one per solution, in the input order.

    ``C`` is the summed portfolio variance of the trajectory.  ``percent=True``
    on the exporters scales ``R``, ``TC`` and ``P`` by 100.
    """

    columns = LANDSCAPE_COLUMNS

    def __init__(self, reports, energies=None):
        self.reports = list(reports)
        # the solver's recorded energy for each row; same as the report value for exact solvers
        self.energies = (
            [r.energy for r in self.reports] if energies is None else list(energies)
        )

    def __len__(self):
        return len(self.reports)

    def rows(self, percent=False):
        f = 100.0 if percent else 1.0
        return [
            (i + 1, e, r.risk, f * r.returns, f * r.transaction_cost, f * r.profit, r.sharpe)
            for i, (r, e) in enumerate(zip(self.reports, self.energies))
        ]

    def column(self, name):
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows()])

    def to_csv(self, percent=False):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows(percent):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        return buf.getvalue()

    def to_text(self, percent=False, digits=6):
        cells = [list(self.columns)]
        for row in self.rows(percent):
            cells.append([str(row[0]), *(f"{v:.{digits}g}" for v in row[1:])])
        widths = [max(len(r[j]) for r in cells) for j in range(len(self.columns))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
        return "\n".join(lines) + "\n"


def landscape_table(solutions, spec):
    """Score every entry of a :class:`SolutionSet` (or list of bit vectors)."""
    reports, energies = [], []
    for entry in solutions:
        bits = entry.bits if hasattr(entry, "bits") else np.asarray(entry)
        traj = BitTrajectory.from_flat(bits, spec)
        reports.append(score(traj, spec))
        energies.append(
            entry.energy if hasattr(entry, "energy")
            else evaluate_hamiltonian(traj, spec).total
        )
    return LandscapeTable(reports, energies)
