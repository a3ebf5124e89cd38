import json

import numpy as np
import pytest
from sklearn.base import clone

from dynport.exceptions import ConfigError, SolverCapError
from dynport.problem import BitTrajectory, QuboMatrix, build_qubo, decode, evaluate_hamiltonian
from dynport.solvers import (
    AnnealSchedule,
    AnnealingSolver,
    ExhaustiveSolver,
    LowEnergySubspaceSolver,
    Mps,
    MpsSolver,
    SolutionSet,
    StepCandidate,
    brute_force_recombine,
    per_step_low_energy,
    rank_candidates,
    recombine,
    site_ordering,
    solve_annealing,
    solve_exhaustive,
    solve_mps,
)
from dynport.synthetic import random_spec


def all_bits(n):
    return ((np.arange(2**n)[:, None] >> np.arange(n)[::-1]) & 1).astype(np.uint8)


def dense_qubo(rng, n):
    A = rng.standard_normal((n, n))
    return QuboMatrix((A + A.T) / 2)


# -- containers -----------------------------------------------------------------


def test_rank_candidates_dedupes_and_breaks_ties():
    bits = np.array([[1, 0], [0, 1], [1, 0], [0, 0]])
    ranked = rank_candidates(bits, [0.0, 0.0, 0.0, 1.0])
    assert [e.bitstring() for e in ranked] == ["01", "10", "00"]


def test_solution_set_json_round_trip(rng, tmp_path):
    spec = random_spec(rng, N=2, N_t=2, N_q=2)
    q = build_qubo(spec)
    res = solve_exhaustive(q, top_k=3)
    path = tmp_path / "s.json"
    res.dump(path, spec, include_timing=False)
    data = json.loads(path.read_text())
    assert data["wall_time_s"] is None
    assert data["entries"][0]["holdings"] == decode(
        BitTrajectory.from_flat(res.best.bits, spec), spec
    ).holdings.astype(int).tolist()
    back = SolutionSet.from_json(path)
    assert [e.bitstring() for e in back] == [e.bitstring() for e in res]
    np.testing.assert_array_equal(back.energies, res.energies)


# -- exhaustive -----------------------------------------------------------------


def test_exhaustive_four_state_example():
    # upper-triangular [[-1, 2], [0, 0]] is symmetric [[-1, 1], [1, 0]]
    q = QuboMatrix(np.array([[-1.0, 1.0], [1.0, 0.0]]))
    res = solve_exhaustive(q, top_k=4)
    assert res.best.bitstring() == "10" and res.best.energy == -1.0
    assert sorted(res.energies) == [-1.0, 0.0, 0.0, 1.0]


def test_exhaustive_xs_state_count(rng):
    spec = random_spec(rng, N=3, N_t=2, N_q=1, K=2)
    res = solve_exhaustive(build_qubo(spec))
    assert res.info["states"] == 64


def test_exhaustive_zero_matrix_tie_break():
    res = solve_exhaustive(QuboMatrix(np.zeros((5, 5))), top_k=3)
    assert [e.bitstring() for e in res] == ["00000", "00001", "00010"]


def test_exhaustive_matches_brute_force(rng):
    for n in (1, 3, 8, 13):
        q = dense_qubo(rng, n)
        e = q.energy(all_bits(n))
        res = solve_exhaustive(q, top_k=5)
        np.testing.assert_allclose(res.energies, np.sort(e)[:5], atol=1e-12)
        for entry in res:
            assert entry.energy == q.energy(entry.bits)


def test_exhaustive_budget_mode(rng):
    spec = random_spec(rng, N=3, N_t=2, N_q=2, K=4)
    q = build_qubo(spec)
    res = solve_exhaustive(q, mode="budget_constrained", top_k=20, spec=spec)
    for entry in res:
        units = decode(BitTrajectory.from_flat(entry.bits, spec), spec).holdings
        assert np.all(units.sum(axis=0) == 4)
    assert res.best.energy >= solve_exhaustive(q).best.energy
    with pytest.raises(ConfigError):
        solve_exhaustive(q, mode="budget_constrained")


def test_exhaustive_cap():
    with pytest.raises(SolverCapError, match="2\\^25"):
        solve_exhaustive(QuboMatrix(np.zeros((25, 25))))


def test_exhaustive_estimator(rng):
    q = dense_qubo(rng, 6)
    est = ExhaustiveSolver(top_k=2).fit(q)
    assert len(est.solutions_) == 2
    np.testing.assert_array_equal(est.predict(), est.solutions_.best.bits)
    assert clone(est).get_params()["top_k"] == 2


# -- annealing ------------------------------------------------------------------


def test_annealing_separable():
    res = solve_annealing(QuboMatrix(-np.eye(12)), AnnealSchedule(restarts=5))
    assert res.best.bitstring() == "1" * 12 and res.best.energy == -12


def test_annealing_deterministic(rng):
    q = dense_qubo(rng, 16)
    a = solve_annealing(q, AnnealSchedule(seed=3))
    b = solve_annealing(q, AnnealSchedule(seed=3))
    assert [e.bitstring() for e in a] == [e.bitstring() for e in b]
    np.testing.assert_array_equal(a.energies, b.energies)


def test_annealing_finds_optimum_and_rescoring(rng):
    for _ in range(5):
        q = dense_qubo(rng, 12)
        res = solve_annealing(q)
        assert res.best.energy == pytest.approx(solve_exhaustive(q).best.energy)
        for entry in res:
            assert entry.energy == q.energy(entry.bits)


def test_annealing_callback_stops():
    res = solve_annealing(QuboMatrix(-np.eye(4)), callback=lambda sweep, e: sweep >= 2)
    assert res.iterations == 2 and res.info["stopped_early"]


@pytest.mark.parametrize(
    "kw", [dict(cooling=1.0), dict(restarts=0), dict(initial_temperature=1.0, final_temperature=2.0)]
)
def test_schedule_validation(kw):
    with pytest.raises(ConfigError):
        AnnealSchedule(**kw)


def test_annealing_estimator_params():
    est = AnnealingSolver(restarts=7, seed=2)
    assert est.schedule() == AnnealSchedule(restarts=7, seed=2)
    est.fit(QuboMatrix(-np.eye(3)))
    assert est.best_energy_ == -3


# -- MPS ------------------------------------------------------------------------


def test_mps_uniform_state():
    mps = Mps.uniform(4)
    np.testing.assert_allclose(mps.to_dense(), np.full(16, 0.25))
    assert mps.norm() == pytest.approx(1.0)
    assert mps.bond_dimensions() == [1, 1, 1]


def test_mps_diagonal_qubo_any_bond_dimension(rng):
    d = rng.standard_normal(9)
    q = QuboMatrix(np.diag(d))
    for D in (1, 2):
        res = solve_mps(q, bond_dim=D, samples=0)
        np.testing.assert_array_equal(res.best.bits, (d < 0).astype(np.uint8))
        assert res.info["max_bond"] == 1


def test_mps_exact_without_truncation(rng):
    n, tau = 8, 0.7
    q = dense_qubo(rng, n)
    captured = []
    solve_mps(q, bond_dim=2 ** (n // 2), tau_schedule=[tau], samples=0, ordering="natural",
              callback=lambda s, m: captured.append(m.to_dense()))
    psi = np.exp(-tau * q.energy(all_bits(n)))
    psi /= np.linalg.norm(psi)
    np.testing.assert_allclose(captured[0], psi, atol=1e-12)


def test_mps_large_tau_finds_unique_ground_state(rng):
    for _ in range(5):
        n = 10
        q = dense_qubo(rng, n)
        e = np.sort(q.energy(all_bits(n)))
        assert e[1] - e[0] > 1e-9
        res = solve_mps(q, bond_dim=32, tau_schedule=[0.5] * 4 + [5.0] * 4, samples=0)
        assert res.best.energy == pytest.approx(e[0])


def test_mps_norm_and_discarded_weight(rng):
    q = dense_qubo(rng, 12)
    res = solve_mps(q, bond_dim=4)
    np.testing.assert_allclose(res.info["norm_history"], 1.0, atol=1e-10)
    w = np.array(res.info["discarded_weight"])
    assert np.all(w >= 0) and np.all(np.diff(w) >= 0)
    assert res.info["max_bond"] <= 4
    assert len(res.info["tau_schedule"]) == 20


def test_mps_rescoring_and_oracle_dominance(rng):
    q = dense_qubo(rng, 10)
    res = solve_mps(q, bond_dim=8, samples=64)
    for entry in res:
        assert entry.energy == q.energy(entry.bits)
    assert res.best.energy >= solve_exhaustive(q).best.energy - 1e-12


def test_mps_deterministic(rng):
    q = dense_qubo(rng, 10)
    a, b = solve_mps(q, bond_dim=4, seed=5), solve_mps(q, bond_dim=4, seed=5)
    assert [e.bitstring() for e in a] == [e.bitstring() for e in b]


def test_mps_input_validation(rng):
    q = dense_qubo(rng, 3)
    with pytest.raises(ConfigError):
        solve_mps(q, bond_dim=0)
    with pytest.raises(ConfigError):
        solve_mps(q, tau_schedule=[-1.0])
    with pytest.raises(ConfigError):
        site_ordering(q.Q, "spiral")


def test_site_ordering_is_permutation(rng):
    q = dense_qubo(rng, 7)
    for method in ("rcm", "natural"):
        assert sorted(site_ordering(q.Q, method)) == list(range(7))


def test_mps_estimator():
    est = MpsSolver(bond_dim=2, samples=8).fit(QuboMatrix(-np.eye(5)))
    assert est.best_energy_ == -5
    assert est.get_params()["bond_dim"] == 2


# -- low-energy subspace --------------------------------------------------------


def test_per_step_single_step_is_top_k(rng):
    spec = random_spec(rng, N=3, N_t=1, N_q=1, lam=0.0)
    cands = per_step_low_energy(spec, k=3)
    assert len(cands) == 1 and len(cands[0]) == 3
    ref = solve_exhaustive(build_qubo(spec.single_step(0)), top_k=3)
    np.testing.assert_allclose([c.energy for c in cands[0]], ref.energies)
    assert isinstance(cands[0][0], StepCandidate)


def test_per_step_complete_enumeration(rng):
    spec = random_spec(rng, N=2, N_t=2, N_q=2)
    cands = per_step_low_energy(spec, k=16)
    for step in cands:
        assert sorted(tuple(c.holdings) for c in step) == sorted(
            (a, b) for a in range(4) for b in range(4)
        )


def test_concatenation_is_optimal_without_costs(rng):
    for _ in range(10):
        spec = random_spec(rng, N=3, N_t=3, N_q=1, lam=0.0)
        cands = per_step_low_energy(spec, k=1)
        units = np.column_stack([c[0].holdings for c in cands])
        traj = decode(BitTrajectory.from_flat(solve_exhaustive(build_qubo(spec)).best.bits, spec), spec)
        e_concat = evaluate_hamiltonian(
            BitTrajectory.from_flat(_bits(units, spec), spec), spec
        ).total
        assert e_concat == pytest.approx(evaluate_hamiltonian(traj, spec).total, abs=1e-12)


def _bits(units, spec):
    from dynport.problem import encode

    return encode(units, spec).flat()


def test_recombine_matches_brute_force(rng):
    for _ in range(10):
        spec = random_spec(rng, N=2, N_t=3, N_q=2)
        cands = [[rng.integers(0, 4, 2) for _ in range(2)] for _ in range(3)]
        res = recombine(cands, spec)
        e, _ = brute_force_recombine(cands, spec)
        assert res.best.energy == pytest.approx(e, abs=1e-12)


def test_recombine_without_costs_is_per_step_argmin(rng):
    spec = random_spec(rng, N=3, N_t=3, N_q=1, lam=0.0)
    cands = per_step_low_energy(spec, k=4)
    res = recombine(cands, spec)
    units = decode(BitTrajectory.from_flat(res.best.bits, spec), spec).holdings
    for t in range(3):
        np.testing.assert_array_equal(units[:, t], cands[t][0].holdings)


def test_recombine_single_candidate(rng):
    spec = random_spec(rng, N=2, N_t=3, N_q=2)
    path = [rng.integers(0, 4, 2) for _ in range(3)]
    res = recombine([[p] for p in path], spec)
    assert len(res) == 1
    e = evaluate_hamiltonian(BitTrajectory.from_flat(_bits(np.column_stack(path), spec), spec), spec)
    assert res.best.energy == pytest.approx(e.total, abs=1e-12)


def test_recombine_dedupes_and_validates(rng):
    spec = random_spec(rng, N=2, N_t=2, N_q=1)
    a = np.array([1, 0])
    res = recombine([[a, a, a], [a]], spec)
    assert res.info["candidates_per_step"] == [1, 1]
    with pytest.raises(ConfigError, match="no candidates"):
        recombine([[a], []], spec)
    with pytest.raises(ConfigError, match="steps"):
        recombine([[a]], spec)


def test_recombine_complete_candidates_reach_optimum(rng):
    for _ in range(5):
        spec = random_spec(rng, N=2, N_t=3, N_q=1)
        res = recombine(per_step_low_energy(spec, k=4), spec)
        assert res.best.energy == pytest.approx(solve_exhaustive(build_qubo(spec)).best.energy)


@pytest.mark.parametrize("inner", ["annealing", "mps"])
def test_subspace_stochastic_inner(rng, inner):
    spec = random_spec(rng, N=3, N_t=2, N_q=1)
    est = LowEnergySubspaceSolver(k=4, inner=inner, seed=1).fit(spec)
    assert est.solutions_.info["inner"] == inner
    assert est.best_energy_ >= solve_exhaustive(build_qubo(spec)).best.energy - 1e-12


def test_subspace_unknown_inner(rng):
    with pytest.raises(ConfigError):
        per_step_low_energy(random_spec(rng), inner="gekko")


def test_every_solver_dominated_by_exhaustive(rng):
    spec = random_spec(rng, N=3, N_t=2, N_q=2)
    q = build_qubo(spec)
    floor = solve_exhaustive(q).best.energy
    for res in (
        solve_annealing(q),
        solve_mps(q, bond_dim=4),
        LowEnergySubspaceSolver(k=3).solve(spec),
    ):
        assert res.best.energy >= floor - 1e-9 * (1 + abs(floor))
        for entry in res:
            e = evaluate_hamiltonian(BitTrajectory.from_flat(entry.bits, spec), spec).total
            assert abs(e - entry.energy) <= 1e-9 * (1 + abs(e))
