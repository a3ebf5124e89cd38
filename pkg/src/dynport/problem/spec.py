"""Problem instances, trajectories and the holdings-space Hamiltonian.

The Hamiltonian evaluated here works directly on (normalized) holdings and
is deliberately written step by step; the QUBO builder assembles the same
energy as a matrix and is checked against this function.
"""

import json
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .._validation import (
    check_bits,
    check_matrix,
    check_nonnegative,
    check_positive_int,
    check_symmetric,
)
from ..exceptions import ConfigError

#: Dataset dimensions of the benchmark profiles (gamma = 1, lambda = 1).
PROFILES = {
    "XS": dict(N=3, N_t=2, N_q=1, K=2),
    "S": dict(N=4, N_t=5, N_q=1, K=3),
    "M": dict(N=4, N_t=7, N_q=1, K=3),
    "L": dict(N=8, N_t=17, N_q=2, K=5),
    "XL": dict(N=8, N_t=29, N_q=2, K=10),
    "XXL": dict(N=8, N_t=53, N_q=3, K=15),
}
PROFILE_GAMMA = 1.0
PROFILE_LAMBDA = 1.0


def _broadcast_rates(value, N, N_t, name):
    """Broadcast a scalar, per-step ``[N_t]``, per-asset ``[N]`` or full array to ``[N, N_t]``."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = np.full((N, N_t), float(a))
    elif a.ndim == 1 and a.shape[0] == N_t:
        a = np.broadcast_to(a, (N, N_t)).copy()
    elif a.ndim == 1 and a.shape[0] == N:
        a = np.broadcast_to(a[:, None], (N, N_t)).copy()
    elif a.shape != (N, N_t):
        raise ConfigError(f"{name} must broadcast to ({N}, {N_t}), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class Extensions:
    """Optional constraint and cost terms beyond the base Hamiltonian.

    ``linear_cost`` switches the parabolic transaction cost for the exact
    absolute-value cost encoded with one ancilla bit per (asset, step).
    ``rule_10_5_40`` turns the instance into a HUBO (see ``build_10_5_40_hubo``).
    Penalty multipliers left as ``None`` are filled in by :class:`ProblemSpec`.
    """

    initial_holdings: Optional[np.ndarray] = None
    cost_diagonal: Optional[np.ndarray] = None
    market_impact: Optional[np.ndarray] = None
    linear_cost: Optional[np.ndarray] = None
    linear_cost_penalty: Optional[float] = None
    rule_10_5_40: bool = False
    slack_bits: int = 4
    forty_penalty: Optional[float] = None
    five_penalty: Optional[float] = None

    def to_json(self):
        out = {}
        for key in ("initial_holdings", "cost_diagonal", "market_impact", "linear_cost"):
            v = getattr(self, key)
            if v is not None:
                out[key] = np.asarray(v).tolist()
        for key in ("linear_cost_penalty", "forty_penalty", "five_penalty"):
            v = getattr(self, key)
            if v is not None:
                out[key] = float(v)
        if self.rule_10_5_40:
            out["rule_10_5_40"] = True
            out["slack_bits"] = int(self.slack_bits)
        return out

    @classmethod
    def from_json(cls, data):
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown extension fields {sorted(unknown)}")
        for key in ("initial_holdings", "cost_diagonal", "market_impact", "linear_cost"):
            if data.get(key) is not None:
                data[key] = np.asarray(data[key], dtype=float)
        return cls(**data)


def default_rho(mu, sigma, gamma, K, N_q, lam=0.0, impact=None):
    """Budget multiplier large enough that moving one unit off the budget never pays.

    A one-unit deviation (``1/K`` in normalized weight) costs ``rho / K**2``
    and gains at most ``|mu|/K`` in returns plus a bounded amount of risk,
    transaction cost and market impact, each scaling with the per-asset cap
    ``K' = 2**N_q - 1``.
    """
    k_cap = 2**N_q - 1
    mu_inf = float(np.max(np.abs(mu))) if np.size(mu) else 0.0
    sig_inf = float(max(np.abs(s).sum(axis=1).max() for s in sigma)) if len(sigma) else 0.0
    lam_max = float(np.max(lam)) if np.size(lam) else 0.0
    imp_max = float(np.max(np.abs(impact))) if impact is not None else 0.0
    rho = 2.0 * (K * mu_inf + k_cap * (gamma * sig_inf + 2.0 * lam_max + imp_max))
    return rho if rho > 0 else 1.0


@dataclass(frozen=True)
class ProblemSpec:
    """A dynamic portfolio instance.

    ``mu`` is ``[N, N_t]`` (forecast log returns per asset and step) and
    ``sigma`` is ``[N_t, N, N]`` (one covariance per step).  ``lam`` is the
    parabolic transaction-cost coefficient (``lambda`` in JSON).  ``rho=None``
    selects :func:`default_rho`.
    """

    N: int
    N_t: int
    N_q: int
    K: int
    mu: np.ndarray
    sigma: np.ndarray
    gamma: float = 1.0
    lam: float = 1.0
    rho: Optional[float] = None
    extensions: Extensions = field(default_factory=Extensions)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        for name in ("N", "N_t", "N_q", "K"):
            set_(name, check_positive_int(getattr(self, name), name))
        for name in ("gamma", "lam"):
            set_(name, check_nonnegative(getattr(self, name), name))
        N, N_t = self.N, self.N_t
        mu = check_matrix(self.mu, "mu", shape=(N, N_t)).copy()
        sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (N_t, N, N):
            raise ConfigError(f"sigma must have shape ({N_t}, {N}, {N}), got {sigma.shape}")
        for t in range(N_t):
            check_symmetric(sigma[t], f"sigma[{t}]", atol=1e-12)
        sigma = 0.5 * (sigma + np.swapaxes(sigma, 1, 2))
        mu.setflags(write=False)
        sigma.setflags(write=False)
        set_("mu", mu)
        set_("sigma", sigma)

        ext = self.extensions
        if isinstance(ext, dict):
            ext = Extensions.from_json(ext)
        updates = {}
        if ext.initial_holdings is not None:
            init = np.asarray(ext.initial_holdings, dtype=float)
            if init.shape != (N,):
                raise ConfigError(f"initial_holdings must have shape ({N},)")
            updates["initial_holdings"] = init
        if ext.cost_diagonal is not None:
            diag = np.asarray(ext.cost_diagonal, dtype=float)
            if diag.shape != (N,) or np.any(diag < 0):
                raise ConfigError(f"cost_diagonal must be {N} non-negative values")
            updates["cost_diagonal"] = diag
        if ext.market_impact is not None:
            updates["market_impact"] = _broadcast_rates(ext.market_impact, N, N_t, "market_impact")
        if ext.linear_cost is not None:
            nu = _broadcast_rates(ext.linear_cost, N, N_t, "linear_cost")
            if np.any(nu < 0):
                raise ConfigError("linear_cost rates must be non-negative")
            if self.lam != 0 or ext.cost_diagonal is not None:
                raise ConfigError(
                    "parabolic (lambda) and exact linear transaction costs are mutually "
                    "exclusive; set lambda=0 when linear_cost is given"
                )
            updates["linear_cost"] = nu
        if ext.rule_10_5_40:
            check_positive_int(ext.slack_bits, "slack_bits")
            if 2**self.N_q - 1 > 0.1 * self.K:
                raise ConfigError(
                    f"10-5-40 rule needs K' = 2^N_q - 1 = {2**self.N_q - 1} <= 10% of "
                    f"K = {self.K}, so that no single holding can exceed the 10% cap"
                )
        ext = replace(ext, **updates)

        rho = self.rho
        if rho is None:
            rho = default_rho(
                mu, sigma, self.gamma, self.K, self.N_q, self.cost_vector, ext.market_impact
            )
        set_("rho", check_nonnegative(rho, "rho"))
        # ancilla sign control is only reliable when rho' > 2 nu
        if ext.linear_cost is not None and ext.linear_cost_penalty is None:
            ext = replace(
                ext, linear_cost_penalty=max(self.rho, 4.0 * float(ext.linear_cost.max()))
            )
        if ext.rule_10_5_40:
            ext = replace(
                ext,
                forty_penalty=self.rho if ext.forty_penalty is None else ext.forty_penalty,
                five_penalty=self.rho if ext.five_penalty is None else ext.five_penalty,
            )
        set_("extensions", ext)
        for arr in (ext.initial_holdings, ext.cost_diagonal, ext.market_impact, ext.linear_cost):
            if arr is not None:
                arr.setflags(write=False)

    # -- derived quantities -------------------------------------------------

    @property
    def max_holding(self):
        """Per-asset cap ``K' = 2**N_q - 1`` implied by the binary encoding."""
        return 2**self.N_q - 1

    @property
    def n_holding_bits(self):
        return self.N * self.N_t * self.N_q

    @property
    def n_ancillas(self):
        return self.N * self.N_t if self.extensions.linear_cost is not None else 0

    @property
    def n_variables(self):
        return self.n_holding_bits + self.n_ancillas

    @property
    def initial_holdings(self):
        init = self.extensions.initial_holdings
        return np.zeros(self.N) if init is None else init

    @property
    def cost_vector(self):
        """Per-asset parabolic cost coefficients (``lam`` unless overridden)."""
        diag = self.extensions.cost_diagonal
        return np.full(self.N, self.lam) if diag is None else diag

    def single_step(self, t):
        """The uncoupled one-step instance ``h_t`` (no transaction terms)."""
        return ProblemSpec(
            self.N, 1, self.N_q, self.K, self.mu[:, t : t + 1], self.sigma[t : t + 1],
            gamma=self.gamma, lam=0.0, rho=self.rho,
        )

    def with_dimensions(self, N=None, N_t=None):
        """Leading ``N`` assets and ``N_t`` steps of this instance."""
        N = self.N if N is None else N
        N_t = self.N_t if N_t is None else N_t
        return replace(
            self, N=N, N_t=N_t, mu=self.mu[:N, :N_t], sigma=self.sigma[:N_t, :N, :N],
            extensions=Extensions(),
        )

    # -- serialization --------------------------------------------------------

    def to_json(self):
        return {
            "N": self.N,
            "N_t": self.N_t,
            "N_q": self.N_q,
            "K": self.K,
            "gamma": self.gamma,
            "lambda": self.lam,
            "rho": self.rho,
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "extensions": self.extensions.to_json(),
        }

    @classmethod
    def from_json(cls, data):
        required = {"N", "N_t", "N_q", "K", "mu", "sigma"}
        missing = required - set(data)
        if missing:
            raise ConfigError(f"problem JSON lacks fields {sorted(missing)}")
        return cls(
            N=data["N"], N_t=data["N_t"], N_q=data["N_q"], K=data["K"],
            mu=np.asarray(data["mu"], dtype=float),
            sigma=np.asarray(data["sigma"], dtype=float),
            gamma=data.get("gamma", 1.0), lam=data.get("lambda", 1.0), rho=data.get("rho"),
            extensions=Extensions.from_json(data.get("extensions")),
        )

    def dumps(self):
        return dumps_canonical(self.to_json())


def dumps_canonical(obj):
    """Deterministic JSON text (sorted keys, shortest float repr)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class BitTrajectory:
    """Bits ``x[n, t, q]`` (``q = 0`` least significant) plus optional ancillas ``y[n, t]``."""

    bits: np.ndarray
    ancillas: Optional[np.ndarray] = None

    def __post_init__(self):
        bits = check_bits(self.bits)
        if bits.ndim != 3:
            raise ConfigError("bits must have shape (N, N_t, N_q)")
        object.__setattr__(self, "bits", bits)
        if self.ancillas is not None:
            anc = check_bits(self.ancillas, name="ancillas")
            if anc.shape != bits.shape[:2]:
                raise ConfigError("ancillas must have shape (N, N_t)")
            object.__setattr__(self, "ancillas", anc)

    def flat(self):
        """Variable vector in (n-major, t, q-minor) order, ancillas appended."""
        out = self.bits.ravel()
        if self.ancillas is not None:
            out = np.concatenate([out, self.ancillas.ravel()])
        return out

    @classmethod
    def from_flat(cls, x, spec):
        x = check_bits(x, spec.n_variables)
        nh = spec.n_holding_bits
        bits = x[:nh].reshape(spec.N, spec.N_t, spec.N_q)
        anc = x[nh:].reshape(spec.N, spec.N_t) if spec.n_ancillas else None
        return cls(bits, anc)

    def to_string(self):
        return "".join("1" if b else "0" for b in self.flat())


@dataclass(frozen=True)
class HoldingsTrajectory:
    """Holdings ``[N, N_t]``: units ``w_bar`` or, if ``normalized``, fractions ``w_bar / K``."""

    holdings: np.ndarray
    normalized: bool = False
    K: Optional[float] = None
    allow_short: bool = False

    def __post_init__(self):
        h = np.array(self.holdings, dtype=float)
        if h.ndim != 2:
            raise ConfigError("holdings must have shape (N, N_t)")
        if not self.allow_short and np.any(h < 0):
            raise ConfigError("holdings must be non-negative")
        h.setflags(write=False)
        object.__setattr__(self, "holdings", h)

    def as_normalized(self, K=None):
        if self.normalized:
            return self
        K = self.K if K is None else K
        if K is None:
            raise ConfigError("K is required to normalize holdings")
        return HoldingsTrajectory(self.holdings / K, True, K, self.allow_short)

    def as_units(self, K=None):
        if not self.normalized:
            return self
        K = self.K if K is None else K
        if K is None:
            raise ConfigError("K is required to convert to units")
        return HoldingsTrajectory(self.holdings * K, False, K, self.allow_short)

    def omega(self, K=None):
        return self.as_normalized(K).holdings


def decode(bits, spec):
    """Integer holdings ``w_bar[n, t] = sum_q 2**q x[n, t, q]``."""
    if not isinstance(bits, BitTrajectory):
        bits = BitTrajectory.from_flat(bits, spec)
    if bits.bits.shape != (spec.N, spec.N_t, spec.N_q):
        raise ConfigError(
            f"bits shape {bits.bits.shape} does not match ({spec.N}, {spec.N_t}, {spec.N_q})"
        )
    weights = 2 ** np.arange(spec.N_q)
    return HoldingsTrajectory(bits.bits @ weights, normalized=False, K=spec.K)


def encode(holdings, spec):
    """Inverse of :func:`decode` for integer holdings in ``[0, 2**N_q - 1]``."""
    h = holdings.as_units(spec.K).holdings if isinstance(holdings, HoldingsTrajectory) else holdings
    h = np.asarray(h)
    units = np.rint(h).astype(np.int64)
    if units.shape != (spec.N, spec.N_t):
        raise ConfigError(f"holdings must have shape ({spec.N}, {spec.N_t})")
    if not np.allclose(units, h, atol=1e-9) or units.min() < 0 or units.max() > spec.max_holding:
        raise ConfigError(f"holdings must be integers in [0, {spec.max_holding}]")
    bits = (units[..., None] >> np.arange(spec.N_q)) & 1
    return BitTrajectory(bits.astype(np.uint8))


# ---------------------------------------------------------------------------
# Hamiltonian


class HamiltonianValue(NamedTuple):
    """Energy of a trajectory split into its additive terms."""

    total: float
    returns: float
    risk: float
    cost: float
    penalty: float
    impact: float = 0.0
    ancilla_penalty: float = 0.0


def step_energy(omega_t, t, spec):
    """Returns, risk and budget terms of step ``t`` as ``(returns, risk, penalty)``."""
    ret = -float(spec.mu[:, t] @ omega_t)
    risk = 0.5 * spec.gamma * float(omega_t @ spec.sigma[t] @ omega_t)
    pen = spec.rho * (float(omega_t.sum()) - 1.0) ** 2
    return ret, risk, pen


def optimal_ancillas(delta, spec, t=None):
    """Ancilla values minimizing the exact-cost terms for given trades ``delta``.

    ``y = 1`` exactly where the combined coefficient ``(rho' - 2 nu) * delta`` is
    negative, i.e. on sells when ``rho' > 2 nu``.
    """
    nu = spec.extensions.linear_cost
    nu = nu if t is None else nu[:, t]
    kappa = spec.extensions.linear_cost_penalty - 2.0 * nu
    return (kappa * delta < 0).astype(np.uint8)


def transition_energy(prev, cur, t, spec, y=None):
    """Terms coupling steps ``t - 1`` and ``t``: ``(cost, impact, ancilla_penalty)``."""
    delta = cur - prev
    ext = spec.extensions
    if ext.linear_cost is not None:
        nu = ext.linear_cost[:, t]
        if y is None:
            y = optimal_ancillas(delta, spec, t)
        cost = float(np.sum(nu * delta * (1.0 - 2.0 * y)))
        anc = ext.linear_cost_penalty * float(np.sum(delta * y))
    else:
        cost = float(np.sum(spec.cost_vector * delta**2))
        anc = 0.0
    impact = 0.0
    if ext.market_impact is not None:
        impact = -float(np.sum(ext.market_impact[:, t] * delta * cur))
    return cost, impact, anc


def evaluate_hamiltonian(traj, spec, ancillas=None):
    """Energy of a holdings trajectory with its per-term breakdown.

    ``traj`` may be a :class:`HoldingsTrajectory` (units are normalized by
    ``spec.K``) or a :class:`BitTrajectory`.  For the exact linear cost model
    the ancillas default to their optimal values given the trades.
    """
    if isinstance(traj, BitTrajectory):
        if ancillas is None:
            ancillas = traj.ancillas
        traj = decode(traj, spec)
    omega = traj.omega(spec.K)
    if omega.shape != (spec.N, spec.N_t):
        raise ConfigError(
            f"trajectory shape {omega.shape} does not match ({spec.N}, {spec.N_t})"
        )
    if ancillas is not None:
        ancillas = np.asarray(ancillas)
        if ancillas.shape != (spec.N, spec.N_t):
            raise ConfigError("ancillas must have shape (N, N_t)")
    ret = risk = cost = pen = imp = anc = 0.0
    prev = spec.initial_holdings
    for t in range(spec.N_t):
        cur = omega[:, t]
        r, k, p = step_energy(cur, t, spec)
        c, i, a = transition_energy(
            prev, cur, t, spec, None if ancillas is None else ancillas[:, t]
        )
        ret, risk, pen, cost, imp, anc = ret + r, risk + k, pen + p, cost + c, imp + i, anc + a
        prev = cur
    total = ret + risk + cost + pen + imp + anc
    return HamiltonianValue(total, ret, risk, cost, pen, imp, anc)
