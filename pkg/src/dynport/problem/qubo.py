"""QUBO and Ising compilation of a :class:`~dynport.problem.spec.ProblemSpec`."""

import io
import os
from dataclasses import dataclass

import numpy as np

from .._validation import check_bits, check_symmetric
from ..exceptions import ConfigError, DataError, SolverCapError

DEFAULT_MAX_VARIABLES = 4096


@dataclass(frozen=True)
class QuboMatrix:
    """Energy ``x^T Q x + offset`` over binary ``x`` with symmetric ``Q``.

    Linear coefficients live on the diagonal (``x_i**2 == x_i``).
    """

    Q: np.ndarray
    offset: float = 0.0
    n_holding_bits: int = None

    def __post_init__(self):
        q = check_symmetric(self.Q, "Q", atol=1e-12)
        q = 0.5 * (q + q.T)
        q.setflags(write=False)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "offset", float(self.offset))
        if self.n_holding_bits is None:
            object.__setattr__(self, "n_holding_bits", q.shape[0])

    @property
    def n_variables(self):
        return self.Q.shape[0]

    def energy(self, x):
        """Energy of one bit vector or of each row of a ``[k, n]`` batch."""
        x = check_bits(x, self.n_variables).astype(float)
        # one code path, so single and batched energies agree bit for bit
        e = np.einsum("ki,ij,kj->k", np.atleast_2d(x), self.Q, np.atleast_2d(x)) + self.offset
        return float(e[0]) if x.ndim == 1 else e

    def coefficients(self):
        """Upper-triangle coefficients: ``Q_ii`` on the diagonal, ``2 Q_ij`` above it."""
        upper = np.triu(self.Q, 1) * 2.0
        upper[np.diag_indices_from(upper)] = np.diag(self.Q)
        return upper


@dataclass(frozen=True)
class IsingModel:
    """Energy ``sum_ij J_ij s_i s_j + sum_i h_i s_i + offset`` over ``s in {-1, +1}``.

    ``J`` is symmetric with zero diagonal, so each pair appears twice in the sum.
    """

    J: np.ndarray
    h: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        J = check_symmetric(self.J, "J")
        if np.any(np.diag(J) != 0):
            raise ConfigError("Ising couplings must have zero diagonal")
        h = np.asarray(self.h, dtype=float)
        J.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "offset", float(self.offset))

    def energy(self, s):
        s = np.asarray(s, dtype=float)
        if s.size and not np.all(np.abs(s) == 1):
            raise ConfigError("spins must be -1 or +1")
        if s.ndim == 1:
            return float(s @ self.J @ s + self.h @ s) + self.offset
        return np.einsum("ki,ij,kj->k", s, self.J, s) + s @ self.h + self.offset


def qubo_to_ising(q):
    """Map a QUBO onto spins through ``x = (1 + s) / 2``; energies are preserved."""
    Q = q.Q
    J = Q / 4.0
    np.fill_diagonal(J, 0.0)
    h = Q.sum(axis=1) / 2.0
    offset = q.offset + Q.sum() / 4.0 + np.trace(Q) / 4.0
    return IsingModel(J, h, offset)


def bits_to_spins(x):
    return 2.0 * np.asarray(x, dtype=float) - 1.0


# ---------------------------------------------------------------------------
# builder


def _encoding_map(spec):
    """Matrix mapping holding bits to normalized weights, rows in (n, t) order."""
    N, T, Nq = spec.N, spec.N_t, spec.N_q
    M = N * T
    enc = np.zeros((M, M * Nq))
    rows = np.repeat(np.arange(M), Nq)
    enc[rows, np.arange(M * Nq)] = np.tile(2.0 ** np.arange(Nq), M) / spec.K
    return enc


def _difference_operator(N, T):
    """``D`` with ``(D w)[n, t] = w[n, t] - w[n, t-1]`` (the ``t = 0`` row keeps ``w[n, 0]``)."""
    M = N * T
    D = np.eye(M)
    idx = np.arange(M)
    later = idx % T != 0
    D[idx[later], idx[later] - 1] = -1.0
    return D


def build_qubo(spec, max_variables=DEFAULT_MAX_VARIABLES):
    """Compile ``spec`` into a :class:`QuboMatrix`.

    The energy is first assembled as a quadratic form over normalized weights
    (and ancillas, for exact linear costs), then pulled back through the
    binary encoding.  Variables are ordered (n-major, t, q-minor) with the
    ancillas ``y[n, t]`` appended.
    """
    ext = spec.extensions
    if ext.rule_10_5_40:
        raise ConfigError("the 10-5-40 rule yields a HUBO; use build_10_5_40_hubo")
    n_vars = spec.n_variables
    if n_vars > max_variables:
        raise SolverCapError(
            f"QUBO would have {n_vars} variables ({spec.n_holding_bits} holding bits + "
            f"{spec.n_ancillas} ancillas), above the limit of {max_variables}"
        )
    N, T = spec.N, spec.N_t
    M = N * T
    n_anc = spec.n_ancillas
    size = M + n_anc
    A = np.zeros((size, size))
    b = np.zeros(size)
    c = 0.0
    w = slice(0, M)

    b[w] -= spec.mu.ravel()
    for t in range(T):
        idx = np.arange(N) * T + t
        A[np.ix_(idx, idx)] += 0.5 * spec.gamma * spec.sigma[t] + spec.rho
        b[idx] -= 2.0 * spec.rho
        c += spec.rho

    D = _difference_operator(N, T)
    p = np.zeros(M)
    p[np.arange(N) * T] = spec.initial_holdings
    if ext.linear_cost is not None:
        nu = ext.linear_cost.ravel()
        kappa = ext.linear_cost_penalty - 2.0 * nu
        # nu * delta + kappa * delta * y, with delta = D w - p
        b[w] += D.T @ nu
        c -= nu @ p
        cross = kappa[:, None] * D
        A[M:, w] += 0.5 * cross
        A[w, M:] += 0.5 * cross.T
        b[M:] -= kappa * p
    else:
        lam = np.repeat(spec.cost_vector, T)
        A[w, w] += D.T @ (lam[:, None] * D)
        b[w] -= 2.0 * D.T @ (lam * p)
        c += float(p @ (lam * p))
    if ext.market_impact is not None:
        m = ext.market_impact.ravel()
        # -(D w - p)^T diag(m) w
        DtM = D.T * m[None, :]
        A[w, w] -= 0.5 * (DtM + DtM.T)
        b[w] += m * p

    enc = np.zeros((size, n_vars))
    enc[:M, : spec.n_holding_bits] = _encoding_map(spec)
    if n_anc:
        enc[M:, spec.n_holding_bits :] = np.eye(n_anc)
    Q = enc.T @ A @ enc
    Q = 0.5 * (Q + Q.T)
    Q[np.diag_indices(n_vars)] += enc.T @ b
    return QuboMatrix(Q, c, spec.n_holding_bits)


# ---------------------------------------------------------------------------
# text export


def write_qubo(q, target):
    """Write ``i j value`` triplets (upper triangle, zero-based) after a ``# offset`` line.

    ``value`` is the coefficient of ``x_i x_j`` in the energy, so the energy is
    ``offset + sum(value * x_i * x_j)`` over the listed pairs.
    """
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", encoding="utf-8") as fh:
            return write_qubo(q, fh)
    coef = q.coefficients()
    target.write(f"# offset {q.offset!r}\n")
    target.write(f"# variables {q.n_variables}\n")
    for i, j in zip(*np.nonzero(coef)):
        target.write(f"{i} {j} {float(coef[i, j])!r}\n")


def read_qubo(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return read_qubo(fh)
    if isinstance(source, str):
        source = io.StringIO(source)
    offset, n, triplets = None, None, []
    for lineno, line in enumerate(source, 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "offset":
                offset = float(parts[1])
            elif len(parts) == 2 and parts[0] == "variables":
                n = int(parts[1])
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"line {lineno}: expected 'i j value'")
        i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        if i > j:
            raise DataError(f"line {lineno}: entries must be upper-triangular (i <= j)")
        triplets.append((i, j, v))
    if offset is None:
        raise DataError("missing '# offset <c>' header line")
    if n is None:
        n = 1 + max((j for _, j, _ in triplets), default=-1)
    Q = np.zeros((n, n))
    for i, j, v in triplets:
        if i == j:
            Q[i, i] += v
        else:
            Q[i, j] += v / 2.0
            Q[j, i] += v / 2.0
    return QuboMatrix(Q, offset)
