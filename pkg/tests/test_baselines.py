import numpy as np
import pytest

from adasdbo.adaptive import AdaSDBOConfig, step_with_info
from adasdbo.baselines import ConstConfig, const_step, const_step_with_info
from adasdbo.network import build_complete
from adasdbo.problems import QuadraticBilevel
from adasdbo.runner import run
from adasdbo.swarm import DivergenceError, InitSpec

from conftest import heterogeneous_swarm


def test_identical_rows_tiny_step(quad5, ring5):
    prob = QuadraticBilevel(quad5.a, quad5.b, quad5.c, num_agents=5)
    s0 = InitSpec(x0=np.ones(5), y0=np.ones(5), v0=np.ones(5)).build(prob)
    s1 = const_step(s0, prob, ring5, ConstConfig(1e-15, 1e-15, 1e-15))
    np.testing.assert_allclose(s1.x, s0.x, atol=1e-13)
    np.testing.assert_allclose(s1.y, s0.y, atol=1e-13)
    np.testing.assert_array_equal(s1.acc_x, s0.acc_x)


def test_scalar_lower_contraction(scalar_quadratic):
    state = InitSpec(x0=[0.8], y0=[-1.0]).build(scalar_quadratic)
    cfg = ConstConfig(eta_x=1e-300, eta_y=0.5, eta_v=0.01)
    W = build_complete(1)
    for _ in range(6):
        x, y = state.x[0, 0], state.y[0, 0]
        state = const_step(state, scalar_quadratic, W, cfg)
        assert state.y[0, 0] == pytest.approx(y - 0.5 * (y - x), rel=1e-15)
        assert abs(state.y[0, 0] - x) == pytest.approx(0.5 * abs(y - x), rel=1e-12)


def test_large_eta_diverges(quad5, ring5):
    with pytest.raises(DivergenceError) as info:
        run(quad5, ring5, ConstConfig(eta_x=100.0, rounds=50))
    # frozen from the implementation
    assert info.value.round < 50
    res = run(quad5, ring5, ConstConfig(eta_x=100.0, rounds=50), raise_on_divergence=False)
    assert res.diverged and res.rounds_completed < 50
    assert res.divergence_round == info.value.round


def test_matches_adasdbo_with_matched_stepsizes():
    prob = QuadraticBilevel.random(1, 3, 3, seed=4, scale=1.0)
    W = build_complete(1)
    state = heterogeneous_swarm(prob, seed=8)
    ada, info = step_with_info(state, prob, W, AdaSDBOConfig(1.0, 1.0, 1.0))
    cfg = ConstConfig(eta_x=1.0 / info.q[0], eta_y=1.0 / info.u[0], eta_v=1.0 / info.z[0])
    const = const_step(state, prob, W, cfg)
    for name in "xyv":
        np.testing.assert_allclose(getattr(const, name), getattr(ada, name), rtol=1e-15,
                                   atol=1e-16)


def test_small_eta_lower_level_converges(quad5, ring5):
    cfg = ConstConfig(eta_x=1e-3, eta_y=0.1, eta_v=0.01)
    state = InitSpec(y0=np.full(5, 2.0)).build(quad5)
    gaps = []
    for _ in range(60):
        state = const_step(state, quad5, ring5, cfg)
        xbar, ybar, _ = state.means()
        gaps.append(np.linalg.norm(ybar - quad5.lower_solution(xbar)))
    tail = gaps[10:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_accumulators_untouched(quad5, ring5):
    state = heterogeneous_swarm(quad5)
    new, (gx, gy, gv) = const_step_with_info(state, quad5, ring5, ConstConfig())
    np.testing.assert_array_equal(new.acc_y, state.acc_y)
    assert gx.shape == (5, 5) and new.round == 1


def test_config_validation():
    with pytest.raises(ValueError):
        ConstConfig(eta_y=0)
    with pytest.raises(ValueError):
        ConstConfig(rounds=1.5)
