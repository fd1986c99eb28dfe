"""AdaSDBO: adaptive single-loop decentralized bilevel optimization.

One round at every agent ``i``:

1. local gradients ``g^y = grad_y l_i``, ``g^v = H_yy v - grad_y f_i``,
   ``g^x = grad_x f_i - J_xy v`` at the round-start iterates;
2. squared accumulators grow by ``||g||^2``;
3. hierarchical steps with ``m = sqrt(acc)``::

       y -= gamma_y / m^y                    * g^y
       v -= gamma_v / max(m^v, m^y)          * g^v
       x -= gamma_x / (m^x * max(m^v, m^y))  * g^x

4. gossip mixing of ``x``, ``y``, ``v`` and of the three accumulators;
5. projection of ``v`` onto a centred ball.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .network import mix
from .swarm import check_finite, local_gradients, mix_variables, project

MIX_MODES = ("squared", "linear")


@dataclass(frozen=True)
class AdaSDBOConfig:
    """Control coefficients and run length.

    ``projection_radius=None`` disables the projection of ``v``.
    ``mix_accumulators="linear"`` gossips ``m`` instead of ``m^2`` (ablation).
    """

    gamma_x: float = 1.0
    gamma_y: float = 1.0
    gamma_v: float = 1.0
    m0: float = 10.0
    projection_radius: float | None = None
    rounds: int = 1000
    mix_accumulators: str = "squared"

    def __post_init__(self):
        for name in ("gamma_x", "gamma_y", "gamma_v", "m0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.projection_radius is not None and not self.projection_radius > 0:
            raise ValueError("projection_radius must be positive or None")
        if int(self.rounds) != self.rounds or self.rounds < 0:
            raise ValueError(f"rounds must be a non-negative integer, got {self.rounds!r}")
        if self.mix_accumulators not in MIX_MODES:
            raise ValueError(f"mix_accumulators must be one of {MIX_MODES}")


@dataclass(frozen=True)
class StepInfo:
    """Quantities from one round, before mixing.

    ``acc_*`` are the locally accumulated squares and ``q``, ``u``, ``z`` the
    stepsize denominators actually applied to ``x``, ``y``, ``v``.
    """

    gx: np.ndarray
    gy: np.ndarray
    gv: np.ndarray
    acc_x: np.ndarray
    acc_y: np.ndarray
    acc_v: np.ndarray
    q: np.ndarray
    u: np.ndarray
    z: np.ndarray

    def term_decomposition(self):
        """Split ``(1/n) sum_i q_i^{-1} g^x_i`` into the two parts of the mean update.

        ``term_a = mean(q)^{-1} * mean_i g^x_i`` is the centralised-looking
        step; ``term_b = (1/n) sum_i (q_i^{-1} - mean(q)^{-1}) g^x_i`` is the
        perturbation from stepsize disagreement.  ``x_bar`` moves by
        ``-gamma_x (term_a + term_b)``.
        """
        n = self.q.size
        # equal stepsizes: avoid round-off residue from the mean
        q_mean = self.q[0] if np.all(self.q == self.q[0]) else self.q.mean()
        inv_mean = 1.0 / q_mean
        term_a = inv_mean * self.gx.sum(axis=0) / n
        term_b = ((1.0 / self.q - inv_mean)[:, None] * self.gx).sum(axis=0) / n
        return term_a, term_b


def step_with_info(swarm, problem, W, cfg, executor=None):
    """One AdaSDBO round; returns ``(new_swarm, StepInfo)``."""
    n = swarm.num_agents
    if W.n != n or problem.num_agents != n:
        raise ValueError(f"swarm has {n} agents, W has {W.n}, problem has {problem.num_agents}")
    gx, gy, gv = local_gradients(problem, swarm, executor)
    x, y, v = swarm.x.copy(), swarm.y.copy(), swarm.v.copy()
    acc_x, acc_y, acc_v = swarm.acc_x.copy(), swarm.acc_y.copy(), swarm.acc_v.copy()
    q, u, z = np.empty(n), np.empty(n), np.empty(n)
    kernels.adaptive_update(x, y, v, gx, gy, gv, acc_x, acc_y, acc_v,
                            cfg.gamma_x, cfg.gamma_y, cfg.gamma_v, q, u, z)
    info = StepInfo(gx, gy, gv, acc_x.copy(), acc_y.copy(), acc_v.copy(), q, u, z)

    x, y, v = mix_variables(W, x, y, v)
    if cfg.mix_accumulators == "squared":
        acc_x, acc_y, acc_v = mix(W, acc_x), mix(W, acc_y), mix(W, acc_v)
    else:
        acc_x, acc_y, acc_v = (mix(W, np.sqrt(a)) ** 2 for a in (acc_x, acc_y, acc_v))
    project(v, cfg.projection_radius)

    new = type(swarm)(x, y, v, acc_x, acc_y, acc_v, swarm.round + 1)
    check_finite(new)
    return new, info


def step(swarm, problem, W, cfg, executor=None):
    """One AdaSDBO round (see module docstring); returns the new swarm."""
    return step_with_info(swarm, problem, W, cfg, executor)[0]


def mean_update_decomposition(before, after, problem, W, cfg):
    """Reconstruct ``x_bar`` displacement of one round as ``-gamma_x (term_a + term_b)``.

    Recomputes the round's gradients from ``before`` and checks the identity
    against ``after`` to ``1e-10`` (scaled by the size of the terms).
    Returns ``(term_a, term_b)``.
    """
    if after.round != before.round + 1:
        raise ValueError(f"states are not consecutive (rounds {before.round}, {after.round})")
    _, info = step_with_info(before, problem, W, cfg)
    term_a, term_b = info.term_decomposition()
    moved = after.x.mean(axis=0) - before.x.mean(axis=0)
    resid = np.abs(moved + cfg.gamma_x * (term_a + term_b)).max()
    scale = max(1.0, float(np.abs(before.x).max()))
    if resid > 1e-10 * scale:
        raise ValueError(f"states are not one AdaSDBO round apart (residual {resid:.3g})")
    return term_a, term_b
