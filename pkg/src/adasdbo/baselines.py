"""Constant-stepsize single-loop baseline (ConstSDBO).

Same round structure as AdaSDBO with the accumulation removed and fixed
stepsizes: gradients, local step, gossip of ``x, y, v``, projection of ``v``.
"""
from dataclasses import dataclass

from . import kernels
from .swarm import check_finite, local_gradients, mix_variables, project


@dataclass(frozen=True)
class ConstConfig:
    eta_x: float = 0.01
    eta_y: float = 0.02
    eta_v: float = 0.01
    projection_radius: float | None = None
    rounds: int = 1000

    def __post_init__(self):
        for name in ("eta_x", "eta_y", "eta_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.projection_radius is not None and not self.projection_radius > 0:
            raise ValueError("projection_radius must be positive or None")
        if int(self.rounds) != self.rounds or self.rounds < 0:
            raise ValueError(f"rounds must be a non-negative integer, got {self.rounds!r}")


def const_step_with_info(swarm, problem, W, cfg, executor=None):
    n = swarm.num_agents
    if W.n != n or problem.num_agents != n:
        raise ValueError(f"swarm has {n} agents, W has {W.n}, problem has {problem.num_agents}")
    gx, gy, gv = local_gradients(problem, swarm, executor)
    x, y, v = swarm.x.copy(), swarm.y.copy(), swarm.v.copy()
    kernels.constant_update(x, y, v, gx, gy, gv, cfg.eta_x, cfg.eta_y, cfg.eta_v)
    x, y, v = mix_variables(W, x, y, v)
    project(v, cfg.projection_radius)
    new = type(swarm)(x, y, v, swarm.acc_x.copy(), swarm.acc_y.copy(), swarm.acc_v.copy(),
                      swarm.round + 1)
    check_finite(new)
    return new, (gx, gy, gv)


def const_step(swarm, problem, W, cfg, executor=None):
    """One ConstSDBO round with stepsizes ``eta_x``, ``eta_y``, ``eta_v``."""
    return const_step_with_info(swarm, problem, W, cfg, executor)[0]
