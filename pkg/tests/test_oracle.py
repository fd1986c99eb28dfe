import numpy as np
import pytest

from adasdbo.oracle import (HypergradientOracle, OracleConfig, OracleFailure,
                            conjugate_gradient, hyper_objective, solve_linear_system,
                            solve_lower, stationarity, true_hypergradient)
from adasdbo.problems import QuadraticBilevel, SyntheticLogisticHPO, quadratic_true_hypergradient
from adasdbo import fdcheck


def test_scalar_quadratic_values(scalar_quadratic):
    assert true_hypergradient(scalar_quadratic, [2.0]) == pytest.approx([4.0], rel=1e-12)
    assert stationarity(scalar_quadratic, [2.0]) == pytest.approx(16.0, rel=1e-12)
    assert stationarity(scalar_quadratic, [0.0]) <= 1e-16


def test_quadratic_lower_and_linear_solves(quad5):
    g = np.random.default_rng(0)
    x = 0.1 * g.standard_normal(5)
    cfg = OracleConfig(inner_tol=1e-10, max_inner_iters=200)
    y = solve_lower(quad5, x, cfg)
    np.testing.assert_allclose(y, quad5.lower_solution(x), atol=1e-10)
    assert np.linalg.norm(quad5.mean_grad_lower_y(x, y)) <= 1e-10
    v = solve_linear_system(quad5, x, y)
    np.testing.assert_allclose(v, y - quad5.b, atol=1e-10)
    assert np.linalg.norm(quad5.mean_hvp_lower_yy(x, y, v) - quad5.mean_grad_upper_y(x, y)) <= 1e-10


def test_zero_rhs_and_ridge():
    prob = SyntheticLogisticHPO([(np.zeros((4, 3)), np.ones(4))], [(np.zeros((4, 3)), np.zeros(4))])
    lam = np.zeros(3)
    np.testing.assert_allclose(solve_lower(prob, lam), 0, atol=1e-12)
    np.testing.assert_array_equal(solve_linear_system(prob, lam, np.zeros(3)), 0)


def test_minimizer_gives_zero(quad5):
    x = quad5.minimizer()
    assert np.linalg.norm(true_hypergradient(quad5, x)) <= 1e-8


def test_matches_analytic_quadratic():
    for seed in range(20):
        prob = QuadraticBilevel.random(4, 6, 5, seed=seed, heterogeneity=2.0, coupling=1.5)
        x = np.random.default_rng(seed).standard_normal(6) * 3
        exact = quadratic_true_hypergradient(prob, x)
        assert fdcheck.rel_error(true_hypergradient(prob, x), exact) <= 1e-8


def test_matches_finite_differences(small_logistic, quad5):
    g = np.random.default_rng(4)
    for prob in (quad5, small_logistic):
        for _ in range(3):
            x = 0.5 * g.standard_normal(prob.upper_dim)
            assert fdcheck.hypergradient_error(prob, x, h=1e-4) <= 1e-5


def test_lower_objective_not_worse_than_start(small_logistic):
    lam = np.full(small_logistic.upper_dim, -0.5)
    y0 = np.random.default_rng(0).standard_normal(small_logistic.lower_dim)
    y = solve_lower(small_logistic, lam, y0=y0)
    assert small_logistic.mean_lower_loss(lam, y) <= small_logistic.mean_lower_loss(lam, y0)


def test_stationarity_decreases_along_gradient(quad5, small_logistic):
    x = np.ones(5)
    x2 = x - 1e-6 * true_hypergradient(quad5, x)
    assert stationarity(quad5, x2) < stationarity(quad5, x)
    lam = np.full(small_logistic.upper_dim, 0.3)
    lam2 = lam - 1e-6 * true_hypergradient(small_logistic, lam)
    assert hyper_objective(small_logistic, lam2) < hyper_objective(small_logistic, lam)


def test_warm_start_cache_gives_same_answer(small_logistic):
    orc = HypergradientOracle(small_logistic)
    x = np.zeros(small_logistic.upper_dim)
    first = orc.hypergradient(x)
    orc.hypergradient(x + 0.2)
    again = orc.hypergradient(x)
    np.testing.assert_allclose(again, first, rtol=1e-7, atol=1e-9)


def test_cg_contract():
    g = np.random.default_rng(0)
    M = g.standard_normal((6, 6))
    A = M @ M.T + 6 * np.eye(6)
    b = g.standard_normal(6)
    x = conjugate_gradient(lambda s: A @ s, b, tol=1e-12)
    assert np.linalg.norm(A @ x - b) <= 1e-12
    with pytest.raises(OracleFailure):
        conjugate_gradient(lambda s: -s, b)
    with pytest.raises(OracleFailure):
        conjugate_gradient(lambda s: A @ s, b, tol=1e-14, max_iter=1)


def test_iteration_cap_raises(small_logistic):
    with pytest.raises(OracleFailure) as info:
        solve_lower(small_logistic, np.full(small_logistic.upper_dim, -3.0),
                    OracleConfig(max_inner_iters=1))
    assert info.value.residual > 0


def test_config_validation():
    with pytest.raises(ValueError):
        OracleConfig(inner_tol=0)
    with pytest.raises(ValueError):
        OracleConfig(max_cg_iters=0)
