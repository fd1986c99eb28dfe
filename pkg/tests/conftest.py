import numpy as np
import pytest

from adasdbo.problems import QuadraticBilevel, SyntheticLogisticHPO
from adasdbo.data import RngSpec, generate_synthetic
from adasdbo.network import build_ring


@pytest.fixture
def scalar_quadratic():
    """f = x^2/2 + y^2/2, l = (y - x)^2/2, one agent."""
    return QuadraticBilevel(a=[0.0], b=[0.0], c=[[1.0]], num_agents=1)


@pytest.fixture
def quad5():
    return QuadraticBilevel.random(5, 5, 5, seed=0, scale=0.1, heterogeneity=0.5)


@pytest.fixture
def ring5():
    return build_ring(5, 0.4)


@pytest.fixture
def small_logistic():
    shards = generate_synthetic(3, 6, 30, 30, 0.5, RngSpec(1, "tests"))
    return SyntheticLogisticHPO.from_datasets(shards, r=0.5)


def heterogeneous_swarm(problem, seed=0):
    """Random iterates and distinct accumulators for every agent."""
    from adasdbo.swarm import SwarmState
    g = np.random.default_rng(seed)
    n, p, q = problem.num_agents, problem.upper_dim, problem.lower_dim
    return SwarmState(g.standard_normal((n, p)), g.standard_normal((n, q)),
                      g.standard_normal((n, q)), 100 + 50 * g.random(n),
                      100 + 50 * g.random(n), 100 + 50 * g.random(n), 0)
