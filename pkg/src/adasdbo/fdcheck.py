"""Finite-difference checks of the derivative oracles and the hypergradient."""
import numpy as np

from .data import RngSpec, generate_synthetic
from .oracle import OracleConfig, hyper_objective, true_hypergradient
from .problems import QuadraticBilevel, SyntheticLogisticHPO


def rel_error(approx, exact, floor=1e-12):
    """``||approx - exact|| / max(||exact||, floor)``."""
    approx, exact = np.asarray(approx, dtype=np.float64), np.asarray(exact, dtype=np.float64)
    return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), floor))


def fd_gradient(fun, x, h):
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def fd_directional(fun, x, d, h):
    """Central difference of a vector function along direction ``d``."""
    return (fun(x + h * d) - fun(x - h * d)) / (2 * h)


def oracle_errors(problem, agent, x, y, v, h=1e-5):
    """Relative errors of the five oracle actions against finite differences.

    Returns a dict keyed by ``grad_upper_x``, ``grad_upper_y``,
    ``grad_lower_y``, ``hvp_lower_yy`` and ``jvp_lower_xy``.
    """
    i = agent
    out = {
        "grad_upper_x": rel_error(fd_gradient(lambda s: problem.upper_loss(i, s, y), x, h),
                                  problem.grad_upper_x(i, x, y)),
        "grad_upper_y": rel_error(fd_gradient(lambda s: problem.upper_loss(i, x, s), y, h),
                                  problem.grad_upper_y(i, x, y)),
        "grad_lower_y": rel_error(fd_gradient(lambda s: problem.lower_loss(i, x, s), y, h),
                                  problem.grad_lower_y(i, x, y)),
        "hvp_lower_yy": rel_error(
            fd_directional(lambda s: problem.grad_lower_y(i, x, s), y, v, h),
            problem.hvp_lower_yy(i, x, y, v)),
    }
    # J_xy v = d/dx <grad_y l(x, y), v>
    out["jvp_lower_xy"] = rel_error(
        fd_gradient(lambda s: problem.grad_lower_y(i, s, y) @ v, x, h),
        problem.jvp_lower_xy(i, x, y, v))
    return out


def hypergradient_error(problem, x, h=1e-4, cfg=OracleConfig()):
    """Relative error of the oracle hypergradient against central differences of Phi."""
    fd = fd_gradient(lambda s: hyper_objective(problem, s, cfg), x, h)
    return rel_error(fd, true_hypergradient(problem, x, cfg))


def small_problems(seed=0, num_agents=3):
    """Small quadratic and synthetic-logistic instances for the check suite."""
    quad = QuadraticBilevel.random(num_agents, 6, 5, seed=seed)
    shards = generate_synthetic(num_agents, 8, 40, 40, 0.5, RngSpec(seed, "fdcheck"))
    logi = SyntheticLogisticHPO.from_datasets(shards, r=0.5)
    return {"quadratic": quad, "synthetic": logi}


def run_suite(num_points=20, seed=0, cfg=OracleConfig()):
    """Finite-difference suite over the small problems.

    Returns a dict ``{problem: {check: max relative error}}`` where the checks
    are the five oracle actions and ``hypergradient``.
    """
    gen = np.random.default_rng(seed)
    report = {}
    for name, prob in small_problems(seed).items():
        worst = {}
        for _ in range(num_points):
            x = 0.5 * gen.standard_normal(prob.upper_dim)
            y = gen.standard_normal(prob.lower_dim)
            v = gen.standard_normal(prob.lower_dim)
            agent = int(gen.integers(prob.num_agents))
            errs = oracle_errors(prob, agent, x, y, v)
            errs["hypergradient"] = hypergradient_error(prob, x, cfg=cfg)
            for key, val in errs.items():
                worst[key] = max(worst.get(key, 0.0), val)
        report[name] = worst
    return report
