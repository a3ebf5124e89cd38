import numpy as np
import pytest

from dynport.exceptions import ConfigError
from dynport.problem import ProblemSpec, continuous_optimum, step_gradient
from dynport.synthetic import random_spec


def test_scalar_example():
    spec = ProblemSpec(1, 1, 1, 1, np.array([[0.2]]), np.zeros((1, 1, 1)),
                       gamma=1.0, lam=0.0, rho=10.0)
    res = continuous_optimum(spec)
    assert res.trajectory.holdings[0, 0] == pytest.approx(1.01)
    assert res.budget_residual == pytest.approx(0.01)


def test_uniform_by_symmetry():
    N = 4
    sigma = np.tile(0.3 * np.eye(N), (2, 1, 1))
    spec = ProblemSpec(N, 2, 1, 1, np.full((N, 2), 0.05), sigma, lam=0.0, rho=3.0)
    w = continuous_optimum(spec).trajectory.holdings
    np.testing.assert_allclose(w, w[0, 0], rtol=1e-13)


def test_large_rho_residual_and_stationarity(rng):
    for _ in range(20):
        base = random_spec(rng, N=4, N_t=3, lam=0.0, rho=1.0)
        rho = 1e4 * base.gamma * np.abs(base.sigma).max()
        spec = ProblemSpec(4, 3, 1, 1, base.mu, base.sigma, gamma=base.gamma, lam=0.0, rho=rho)
        res = continuous_optimum(spec)
        assert res.budget_residual <= 1e-3
        w = res.trajectory.holdings
        for t in range(3):
            g = step_gradient(w[:, t], t, spec)
            assert np.linalg.norm(g) <= 1e-8 * (1 + np.linalg.norm(spec.mu[:, t]))


def test_residual_monotone_in_rho(rng):
    base = random_spec(rng, N=3, N_t=2, lam=0.0, rho=1.0)
    residuals = []
    for rho in np.geomspace(0.1, 1e4, 15):
        spec = ProblemSpec(3, 2, 1, 1, base.mu, base.sigma, gamma=base.gamma, lam=0.0, rho=rho)
        residuals.append(continuous_optimum(spec).budget_residual)
    assert np.all(np.diff(residuals) <= 1e-15)


def test_requires_cost_free_problem(rng):
    with pytest.raises(ConfigError, match="lambda"):
        continuous_optimum(random_spec(rng, lam=1.0))


def test_singular_system_reported():
    spec = ProblemSpec(2, 1, 1, 1, np.zeros((2, 1)), np.zeros((1, 2, 2)), lam=0.0, rho=1.0)
    with pytest.raises(ConfigError, match="increase rho"):
        continuous_optimum(spec)


def test_residual_closed_form(rng):
    # u^T w - 1 = (b - 1) / (1 + rho a) with a = u^T A^-1 u, b = u^T A^-1 mu / 2, A = gamma Sigma / 2
    for _ in range(50):
        spec = random_spec(rng, N=4, N_t=2, lam=0.0, sigma_scale=1.0)
        res = continuous_optimum(spec)
        u = np.ones(spec.N)
        for t in range(spec.N_t):
            A = spec.gamma * spec.sigma[t] / 2
            a = u @ np.linalg.solve(A, u)
            b = u @ np.linalg.solve(A, spec.mu[:, t] / 2)
            got = u @ res.trajectory.holdings[:, t] - 1
            assert got == pytest.approx((b - 1) / (1 + spec.rho * a), rel=1e-6, abs=1e-12)
