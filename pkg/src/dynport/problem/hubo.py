"""Higher-order (HUBO) form of the 10-5-40 concentration rule.

Polynomials are plain ``{sorted index tuple: coefficient}`` dicts; the empty
tuple holds the constant.  Idempotence ``x**2 == x`` is applied on every
product, so keys never repeat an index.
"""

from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .._validation import check_bits
from ..exceptions import ConfigError
from .qubo import build_qubo

FIVE = 0.05
FORTY = 0.4


def poly_add(*polys):
    out = defaultdict(float)
    for p in polys:
        for k, v in p.items():
            out[k] += v
    return {k: v for k, v in out.items() if v != 0.0}


def poly_scale(p, a):
    return {k: a * v for k, v in p.items()} if a else {}


def poly_mul(p1, p2):
    out = defaultdict(float)
    for k1, v1 in p1.items():
        for k2, v2 in p2.items():
            key = tuple(sorted(set(k1) | set(k2)))
            out[key] += v1 * v2
    return {k: v for k, v in out.items() if v != 0.0}


def poly_const(c):
    return {(): float(c)} if c else {}


def poly_eval(p, X):
    """Evaluate ``p`` on each row of the 0/1 matrix ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[0])
    by_degree = defaultdict(list)
    for k, v in p.items():
        by_degree[len(k)].append((k, v))
    for deg, items in by_degree.items():
        coef = np.array([v for _, v in items])
        if deg == 0:
            out += coef.sum()
            continue
        idx = np.array([k for k, _ in items])
        out += (X[:, idx].prod(axis=2) * coef).sum(axis=1)
    return out


@dataclass(frozen=True)
class HuboPolynomial:
    """Polynomial energy over bits, plus slack terms minimized in closed form.

    Each entry of ``analytic_slacks`` is ``(coef, r)`` and stands for
    ``min_{a >= 0} coef * (r(x) + a)**2``.  The part ``coef * r**2`` is already
    included in ``terms``; :meth:`energy` adds the correction
    ``-coef * min(r, 0)**2``.
    """

    terms: dict
    n_variables: int
    roster: tuple = ()
    analytic_slacks: tuple = ()
    components: dict = field(default_factory=dict)
    n_holding_bits: int = None

    def __post_init__(self):
        for k in self.terms:
            if list(k) != sorted(set(k)):
                raise ConfigError(f"monomial {k} must have sorted, distinct indices")
            if k and (k[0] < 0 or k[-1] >= self.n_variables):
                raise ConfigError(f"monomial {k} references unknown variables")
        if self.n_holding_bits is None:
            object.__setattr__(self, "n_holding_bits", self.n_variables)

    @property
    def degree(self):
        return max((len(k) for k in self.terms), default=0)

    def index(self, name):
        return self.roster.index(name)

    def _slack_correction(self, X):
        corr = np.zeros(X.shape[0])
        for coef, r in self.analytic_slacks:
            corr -= coef * np.minimum(poly_eval(r, X), 0.0) ** 2
        return corr

    def energy(self, x):
        x = check_bits(x, self.n_variables)
        X = np.atleast_2d(x)
        e = poly_eval(self.terms, X) + self._slack_correction(X)
        return float(e[0]) if x.ndim == 1 else e

    def breakdown(self, x):
        """Energy of each named component (analytic slack correction folded in)."""
        X = np.atleast_2d(check_bits(x, self.n_variables))
        out = {name: poly_eval(p, X) for name, p in self.components.items()}
        if "up_to_forty" in out:
            out["up_to_forty"] = out["up_to_forty"] + self._slack_correction(X)
        if np.asarray(x).ndim == 1:
            out = {k: float(v[0]) for k, v in out.items()}
        return out


def qubo_terms(q):
    coef = q.coefficients()
    terms = {(): q.offset} if q.offset else {}
    for i, j in zip(*np.nonzero(coef)):
        terms[(int(i),) if i == j else (int(i), int(j))] = float(coef[i, j])
    return terms


def _fixed_point(first, bits, scale):
    """``scale * sum_s 2**s b_s / (2**bits - 1)``, spanning ``[0, scale]`` inclusive."""
    step = scale / (2**bits - 1)
    return {(first + s,): step * 2**s for s in range(bits)}


def build_10_5_40_hubo(spec, slack_bits=None, alpha="continuous"):
    """HUBO of the base Hamiltonian plus the 10-5-40 penalties.

    The 10% cap is guaranteed by the encoding (``K' <= 0.1 K``).  Ancillas
    ``y[n, t]`` flag holdings above 5%; the 40% cap on their total is the
    quartic ``up_to_forty`` penalty and the consistency of ``y`` the cubic
    ``who_is_five`` penalty.  The squared slacks of ``who_is_five`` are
    ``slack_bits``-bit fixed-point numbers on ``[0, 0.05]``; the 40% slack
    is continuous and minimized analytically unless ``alpha="discrete"``, in
    which case it is a fixed-point number on ``[0, 0.4]``.
    """
    if alpha not in ("continuous", "discrete"):
        raise ConfigError("alpha must be 'continuous' or 'discrete'")
    ext = spec.extensions
    if 2**spec.N_q - 1 > 0.1 * spec.K:
        raise ConfigError(
            f"10-5-40 rule needs K' = {2**spec.N_q - 1} <= 10% of K = {spec.K} "
            "(no holding may exceed 10% of the portfolio)"
        )
    if ext.linear_cost is not None:
        raise ConfigError("10-5-40 HUBO is defined for the parabolic cost model only")
    S = int(slack_bits if slack_bits is not None else ext.slack_bits)
    rho_forty = ext.forty_penalty if ext.forty_penalty is not None else spec.rho
    rho_five = ext.five_penalty if ext.five_penalty is not None else spec.rho

    N, T, Nq = spec.N, spec.N_t, spec.N_q
    base_spec = replace(spec, extensions=replace(ext, rule_10_5_40=False))
    base = build_qubo(base_spec)
    nh = spec.n_holding_bits
    roster = [f"x[{n},{t},{q}]" for n in range(N) for t in range(T) for q in range(Nq)]
    y0 = nh
    roster += [f"y[{n},{t}]" for n in range(N) for t in range(T)]
    mu0 = len(roster)
    roster += [f"s_mu[{n},{t},{s}]" for n in range(N) for t in range(T) for s in range(S)]
    nu0 = len(roster)
    roster += [f"s_nu[{n},{t},{s}]" for n in range(N) for t in range(T) for s in range(S)]
    a0 = len(roster)
    if alpha == "discrete":
        roster += [f"s_alpha[{t},{s}]" for t in range(T) for s in range(S)]

    def omega(n, t):
        first = (n * T + t) * Nq
        return {(first + q,): 2.0**q / spec.K for q in range(Nq)}

    five, forty, slacks = {}, {}, []
    for t in range(T):
        r = poly_const(-FORTY)
        for n in range(N):
            k = n * T + t
            y = {(y0 + k,): 1.0}
            w = omega(n, t)
            m_mu = _fixed_point(mu0 + k * S, S, FIVE)
            m_nu = _fixed_point(nu0 + k * S, S, FIVE)
            above = poly_add(poly_const(FIVE), poly_scale(w, -1.0), m_mu)
            below = poly_add(w, poly_const(-FIVE), m_nu)
            not_y = poly_add(poly_const(1.0), poly_scale(y, -1.0))
            five = poly_add(
                five,
                poly_mul(y, poly_mul(above, above)),
                poly_mul(not_y, poly_mul(below, below)),
            )
            r = poly_add(r, poly_mul(y, w))
        if alpha == "discrete":
            sq = poly_add(r, _fixed_point(a0 + t * S, S, FORTY))
            forty = poly_add(forty, poly_mul(sq, sq))
        else:
            forty = poly_add(forty, poly_mul(r, r))
            slacks.append((rho_forty, r))
    five = poly_scale(five, rho_five)
    forty = poly_scale(forty, rho_forty)
    base_terms = qubo_terms(base)
    components = {"base": base_terms, "up_to_forty": forty, "who_is_five": five}
    return HuboPolynomial(
        poly_add(base_terms, forty, five),
        len(roster),
        tuple(roster),
        tuple(slacks),
        components,
        nh,
    )


def hubo_assignment(hubo, spec, holding_bits, y):
    """Full variable vector for given holding bits and ancillas, slacks set optimally.

    Each squared slack only enters its own penalty term, so it is chosen by
    scanning its fixed-point grid.
    """
    x = np.zeros(hubo.n_variables, dtype=np.uint8)
    nh = spec.n_holding_bits
    x[:nh] = check_bits(holding_bits, nh)
    y = check_bits(np.asarray(y).ravel(), spec.N * spec.N_t, "y")
    x[nh : nh + len(y)] = y
    omega = (x[:nh].reshape(spec.N, spec.N_t, spec.N_q) @ 2 ** np.arange(spec.N_q)) / spec.K
    S = sum(1 for name in hubo.roster if name.startswith("s_mu[0,0,"))
    grid_vals = np.arange(2**S)
    grid = FIVE * grid_vals / (2**S - 1)
    bits_of = (grid_vals[:, None] >> np.arange(S)) & 1
    for n in range(spec.N):
        for t in range(spec.N_t):
            k = n * spec.N_t + t
            w = omega[n, t]
            j_mu = np.argmin((FIVE - w + grid) ** 2)
            j_nu = np.argmin((w - FIVE + grid) ** 2)
            x[hubo.index(f"s_mu[{n},{t},0]") : hubo.index(f"s_mu[{n},{t},0]") + S] = bits_of[j_mu]
            x[hubo.index(f"s_nu[{n},{t},0]") : hubo.index(f"s_nu[{n},{t},0]") + S] = bits_of[j_nu]
    if any(name.startswith("s_alpha") for name in hubo.roster):
        ya = y.reshape(spec.N, spec.N_t)
        agrid = FORTY * grid_vals / (2**S - 1)
        for t in range(spec.N_t):
            r = float(ya[:, t] @ omega[:, t]) - FORTY
            j = np.argmin((r + agrid) ** 2)
            first = hubo.index(f"s_alpha[{t},0]")
            x[first : first + S] = bits_of[j]
    return x
