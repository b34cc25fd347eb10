import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_force_ot, random_balanced, support_is_acyclic, transport_vertices

from drot.core import ProblemError, SolverConfig, make_problem, random_simplex_instance
from drot.exact import solve_drot_dense_oracle, solve_exact_ot
from drot.solver import solve


def test_single_cell():
    res = solve_exact_ot(make_problem([1.0], [1.0], [[5.0]]))
    assert res.plan.to_dense().tolist() == [[1.0]]
    assert res.cost == 5.0
    assert res.dual_f[0] + res.dual_g[0] == 5.0


def test_zero_cost_matching():
    res = solve_exact_ot(make_problem([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_array_equal(res.plan.to_dense(), 0.5 * np.eye(2))
    assert res.cost == 0.0


def test_two_by_two_optimum():
    # one-parameter family P11 = x: cost 2.5 - 3x, so the vertices cost 2.5 and 1.6
    a, b, C = [0.3, 0.7], [0.6, 0.4], [[1.0, 2.0], [3.0, 1.0]]
    vertices = transport_vertices(a, b)
    costs = sorted({round(float(np.sum(v * np.array(C))), 12) for v in vertices})
    assert costs == [1.6, 2.5]
    res = solve_exact_ot(make_problem(a, b, C))
    assert res.cost == pytest.approx(1.6, abs=1e-12)
    np.testing.assert_allclose(res.plan.to_dense(), [[0.3, 0.0], [0.3, 0.4]], atol=1e-15)


def test_unbalanced_rejected():
    with pytest.raises(ProblemError, match="unbalanced"):
        solve_exact_ot(make_problem([1.0], [0.5, 0.25], [[1.0, 2.0]]))


def test_matches_vertex_enumeration_on_small_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        m, n = rng.integers(1, 5, size=2)
        a, b, C = random_balanced(rng, int(m), int(n))
        res = solve_exact_ot(make_problem(a, b, C))
        assert abs(res.cost - brute_force_ot(a, b, C)) <= 1e-12


def test_degenerate_ties_still_optimal():
    # equal weights and integer costs make many vertices degenerate and tied
    rng = np.random.default_rng(7)
    for _ in range(30):
        a = np.full(4, 0.25)
        C = rng.integers(0, 3, size=(4, 4)).astype(float)
        res = solve_exact_ot(make_problem(a, a, C))
        assert abs(res.cost - brute_force_ot(a, a, C)) <= 1e-12


def _check_lp_certificate(problem, res):
    a, b, C = problem.a, problem.b, problem.C
    P = res.plan.to_dense()
    assert np.max(np.abs(P.sum(1) - a)) <= 1e-9
    assert np.max(np.abs(P.sum(0) - b)) <= 1e-9
    assert P.min() >= 0
    dual = res.dual_f @ a + res.dual_g @ b
    assert abs(dual - res.cost) <= 1e-9 * max(1.0, abs(res.cost))
    assert np.max(res.dual_f[:, None] + res.dual_g[None, :] - C) <= 1e-9
    assert res.dual_f[0] == 0.0


def test_strong_duality_and_vertex_structure():
    rng = np.random.default_rng(99)
    for _ in range(100):
        m, n = (int(x) for x in rng.integers(1, 11, size=2))
        a, b, C = random_balanced(rng, m, n)
        p = make_problem(a, b, C)
        res = solve_exact_ot(p)
        _check_lp_certificate(p, res)
        assert res.plan.nnz <= m + n - 1
        assert support_is_acyclic(res.plan.rows, res.plan.cols, m, n)


@given(st.integers(0, 2**31 - 1), st.integers(2, 30))
def test_certificate_on_simplex_instances(seed, n):
    p = random_simplex_instance(n, seed=seed)
    res = solve_exact_ot(p)
    _check_lp_certificate(p, res)
    assert res.plan.nnz <= 2 * n - 1


def test_hundred_atom_instance_is_a_vertex():
    p = random_simplex_instance(100, seed=0)
    res = solve_exact_ot(p)
    _check_lp_certificate(p, res)
    assert res.plan.nnz <= 199
    assert support_is_acyclic(res.plan.rows, res.plan.cols, 100, 100)


def test_deterministic():
    p = random_simplex_instance(30, seed=5)
    r1, r2 = solve_exact_ot(p), solve_exact_ot(p)
    assert r1.plan == r2.plan and r1.cost == r2.cost


# dense projected-gradient oracle


def test_dense_oracle_trivial():
    res = solve_drot_dense_oracle(make_problem([1.0], [1.0], [[0.0]]), SolverConfig(gamma=1.0))
    assert res.converged
    np.testing.assert_allclose(res.plan.to_dense(), [[1.0]], atol=1e-9)
    assert res.dual_objective == pytest.approx(0.0, abs=1e-9)


def test_dense_oracle_matches_solver_on_diagonal_instance():
    p = make_problem([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]])
    cfg = SolverConfig(gamma=100.0)
    oracle = solve_drot_dense_oracle(p, cfg)
    res = solve(p, cfg)
    assert oracle.converged
    assert abs(oracle.dual_objective - res.primal_objective) <= 1e-6 * (1 + abs(res.primal_objective))


@pytest.mark.parametrize("gamma", [1.0, 10.0, 100.0])
def test_dense_oracle_agrees_with_solver_on_random_instances(gamma):
    for seed in range(5):
        p = random_simplex_instance(5, seed=seed)
        cfg = SolverConfig(gamma=gamma)
        oracle = solve_drot_dense_oracle(p, cfg)
        res = solve(p, cfg)
        assert oracle.converged and res.converged
        assert abs(oracle.dual_objective - res.primal_objective) <= 1e-6 * (1 + abs(res.primal_objective))


@pytest.mark.parametrize("seed", range(3))
def test_dense_oracle_exponential_keeps_marginals_below_weights(seed):
    p = random_simplex_instance(5, seed=seed)
    cfg = SolverConfig(gamma=20.0, phi="exponential", varphi="exponential")
    res = solve_drot_dense_oracle(p, cfg, step_budget=20_000)
    P = res.plan.to_dense()
    assert np.all(P.sum(1) <= p.a)
    assert np.all(P.sum(0) <= p.b)


def test_dense_oracle_budget_exhaustion_is_flagged():
    p = random_simplex_instance(5, seed=0)
    res = solve_drot_dense_oracle(p, SolverConfig(gamma=100.0), step_budget=2)
    assert not res.converged and res.sweeps == 2


def test_dense_oracle_rejects_bad_initial_plan():
    p = random_simplex_instance(3, seed=0)
    with pytest.raises(ProblemError):
        solve_drot_dense_oracle(p, SolverConfig(gamma=1.0), initial_plan=-np.ones((3, 3)))
