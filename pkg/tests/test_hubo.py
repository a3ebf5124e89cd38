import numpy as np
import pytest

from dynport.exceptions import ConfigError
from dynport.problem import (
    BitTrajectory,
    Extensions,
    ProblemSpec,
    build_10_5_40_hubo,
    build_qubo,
    encode,
    evaluate_hamiltonian,
    hubo_assignment,
)
from dynport.problem.hubo import poly_eval, poly_mul
from dynport.solvers import solve_exhaustive


def rule_spec(N=2, T=1, K=10, mu=None, rho=5.0):
    mu = np.zeros((N, T)) if mu is None else mu
    return ProblemSpec(N, T, 1, K, mu, np.zeros((T, N, N)), lam=0.0, rho=rho,
                       extensions=Extensions(rule_10_5_40=True, slack_bits=4))


def test_cap_enforced_at_construction():
    with pytest.raises(ConfigError, match="10%"):
        ProblemSpec(2, 1, 2, 10, np.zeros((2, 1)), np.zeros((1, 2, 2)),
                    extensions=Extensions(rule_10_5_40=True))


def test_poly_mul_applies_idempotence():
    p = {(0,): 1.0, (1,): 2.0}
    sq = poly_mul(p, p)
    assert sq == {(0,): 1.0, (0, 1): 4.0, (1,): 4.0}
    X = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    np.testing.assert_allclose(poly_eval(sq, X), poly_eval(p, X) ** 2)


def test_structure_and_degree():
    spec = rule_spec()
    hubo = build_10_5_40_hubo(spec)
    assert hubo.degree <= 4
    S = 4
    assert hubo.n_variables == spec.n_holding_bits + 2 + 2 * 2 * S
    assert hubo.roster[spec.n_holding_bits] == "y[0,0]"
    for k in hubo.terms:
        assert list(k) == sorted(set(k))


def test_base_part_matches_qubo(rng):
    spec = rule_spec(N=3, T=2, mu=rng.standard_normal((3, 2)))
    hubo = build_10_5_40_hubo(spec)
    base = hubo.components["base"]
    plain = ProblemSpec(3, 2, 1, 10, spec.mu, spec.sigma, lam=0.0, rho=spec.rho)
    q = build_qubo(plain)
    X = rng.integers(0, 2, size=(50, spec.n_holding_bits))
    pad = np.zeros((50, hubo.n_variables - spec.n_holding_bits), dtype=int)
    np.testing.assert_allclose(poly_eval(base, np.hstack([X, pad])), q.energy(X), atol=1e-10)


def test_all_zero_bits_forty_term():
    spec = rule_spec()
    hubo = build_10_5_40_hubo(spec)
    x = np.zeros(hubo.n_variables, dtype=np.uint8)
    # r = -0.4 < 0 is absorbed by the continuous slack alpha^2 = 0.4
    assert hubo.breakdown(x)["up_to_forty"] == pytest.approx(0.0, abs=1e-15)
    discrete = build_10_5_40_hubo(spec, alpha="discrete")
    xd = hubo_assignment(discrete, spec, np.zeros(2), np.zeros(2))
    assert discrete.breakdown(xd)["up_to_forty"] == pytest.approx(0.0, abs=1e-15)


def test_small_holdings_penalty_bound():
    # every holding at or below 5% with y = 0: the five-term residual is a grid error
    spec = rule_spec(N=3, T=1, K=20)
    hubo = build_10_5_40_hubo(spec)
    S = 4
    bound = 2.0 ** (-S + 1) * spec.extensions.five_penalty * spec.N
    for units in ([0, 0, 0], [1, 0, 1], [1, 1, 1]):
        bits = encode(np.array(units)[:, None], spec).flat()
        x = hubo_assignment(hubo, spec, bits, np.zeros(3))
        parts = hubo.breakdown(x)
        assert parts["who_is_five"] <= bound
        assert parts["up_to_forty"] == pytest.approx(0.0, abs=1e-15)


def test_single_holding_above_five_percent():
    spec = rule_spec(N=2, T=1, K=10)
    hubo = build_10_5_40_hubo(spec)
    bits = encode(np.array([[1], [0]]), spec).flat()
    x = hubo_assignment(hubo, spec, bits, np.array([1, 0]))
    # y * omega = 0.1 stays under the 40% cap, so alpha absorbs the residual
    assert hubo.breakdown(x)["up_to_forty"] == pytest.approx(0.0, abs=1e-15)
    discrete = build_10_5_40_hubo(spec, alpha="discrete")
    xd = hubo_assignment(discrete, spec, bits, np.array([1, 0]))
    grid = 0.4 * np.arange(16) / 15
    expected = spec.rho * np.min((0.1 - 0.4 + grid) ** 2)
    assert discrete.breakdown(xd)["up_to_forty"] == pytest.approx(expected, abs=1e-12)


def test_forty_cap_violation_is_penalized():
    # 5 assets at 10% with y = 1 put 50% above the 5% line
    spec = rule_spec(N=5, T=1, K=10)
    hubo = build_10_5_40_hubo(spec)
    x = hubo_assignment(hubo, spec, np.ones(5), np.ones(5))
    assert hubo.breakdown(x)["up_to_forty"] == pytest.approx(spec.rho * 0.1**2)


def test_exhaustive_on_hubo_respects_rule():
    # five assets at 10% would put 50% above the 5% line; one has to go
    N = 5
    ext = Extensions(rule_10_5_40=True, slack_bits=1, forty_penalty=1e3, five_penalty=1e3)
    spec = ProblemSpec(N, 1, 1, 10, np.full((N, 1), 0.5), np.zeros((1, N, N)),
                       lam=0.0, rho=1.0, extensions=ext)
    hubo = build_10_5_40_hubo(spec)
    assert hubo.n_variables == 20
    best = solve_exhaustive(hubo, top_k=1).best
    omega = best.bits[:N] / spec.K
    y = best.bits[N : 2 * N]
    np.testing.assert_array_equal(y, omega > 0.05)
    assert np.sum(omega) == pytest.approx(0.4)
    base = evaluate_hamiltonian(BitTrajectory.from_flat(best.bits[:N], spec), spec).total
    assert hubo.breakdown(best.bits)["base"] == pytest.approx(base)
