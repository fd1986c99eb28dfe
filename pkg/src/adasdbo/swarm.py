"""Agent/swarm state shared by the adaptive method and the baseline."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .network import mix

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Non-finite or exploding iterate; carries the round and offending agent."""

    def __init__(self, round_index, agent, what):
        super().__init__(f"divergence at round {round_index}, agent {agent}: {what}")
        self.round = round_index
        self.agent = agent


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    acc_x_sq: float
    acc_y_sq: float
    acc_v_sq: float


@dataclass
class SwarmState:
    """Stacked iterates (one row per agent) and squared accumulators."""

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    acc_x: np.ndarray
    acc_y: np.ndarray
    acc_v: np.ndarray
    round: int = 0

    @property
    def num_agents(self):
        return self.x.shape[0]

    @property
    def agents(self):
        return [AgentState(self.x[i].copy(), self.y[i].copy(), self.v[i].copy(),
                           float(self.acc_x[i]), float(self.acc_y[i]), float(self.acc_v[i]))
                for i in range(self.num_agents)]

    def copy(self):
        return SwarmState(self.x.copy(), self.y.copy(), self.v.copy(),
                          self.acc_x.copy(), self.acc_y.copy(), self.acc_v.copy(), self.round)

    def means(self):
        return self.x.mean(axis=0), self.y.mean(axis=0), self.v.mean(axis=0)


@dataclass(frozen=True)
class InitSpec:
    """Initial iterates: vectors shared by all agents or ``(n, d)`` arrays.

    ``None`` means zeros.  ``m0`` is the common initial accumulator value
    (accumulators are stored squared).
    """

    x0: object = None
    y0: object = None
    v0: object = None
    m0: float = 10.0

    def build(self, problem):
        n, p, q = problem.num_agents, problem.upper_dim, problem.lower_dim
        if not self.m0 > 0:
            raise ValueError(f"m0 must be positive, got {self.m0!r}")

        def block(val, d):
            if val is None:
                return np.zeros((n, d))
            arr = np.asarray(val, dtype=np.float64)
            if arr.shape == (d,):
                return np.ascontiguousarray(np.broadcast_to(arr, (n, d)))
            if arr.shape == (n, d):
                return np.array(arr, order="C")
            raise ValueError(f"initial value of shape {arr.shape} does not fit ({n}, {d})")

        acc = np.full(n, float(self.m0) ** 2)
        return SwarmState(block(self.x0, p), block(self.y0, q), block(self.v0, q),
                          acc.copy(), acc.copy(), acc.copy(), 0)


def local_gradients(problem, state, executor=None):
    """Evaluate ``(g^x, g^y, g^v)`` for every agent at the round-start state.

    ``g^y = grad_y l``, ``g^v = H_yy v - grad_y f``, ``g^x = grad_x f - J_xy v``.
    With an ``executor`` agents are evaluated concurrently; the result does
    not depend on scheduling.
    """
    def one(i):
        x, y, v = state.x[i], state.y[i], state.v[i]
        gy = problem.grad_lower_y(i, x, y)
        gv = problem.hvp_lower_yy(i, x, y, v) - problem.grad_upper_y(i, x, y)
        gx = problem.grad_upper_x(i, x, y) - problem.jvp_lower_xy(i, x, y, v)
        return gx, gy, gv

    idx = range(state.num_agents)
    parts = list(executor.map(one, idx)) if executor is not None else [one(i) for i in idx]
    gx = np.ascontiguousarray(np.stack([g[0] for g in parts]))
    gy = np.ascontiguousarray(np.stack([g[1] for g in parts]))
    gv = np.ascontiguousarray(np.stack([g[2] for g in parts]))
    for name, g in (("g^x", gx), ("g^y", gy), ("g^v", gv)):
        bad = ~np.all(np.isfinite(g), axis=1)
        if bad.any():
            raise DivergenceError(state.round, int(np.flatnonzero(bad)[0]),
                                  f"non-finite gradient {name}")
    return gx, gy, gv


def project(V, radius):
    """Project the rows of ``V`` onto the centred ball of ``radius`` (in place)."""
    if radius is not None:
        kernels.project_rows(V, float(radius))
    return V


def check_finite(state):
    for name in ("x", "y", "v"):
        block = getattr(state, name)
        bad = ~np.all(np.isfinite(block), axis=1)
        if bad.any():
            raise DivergenceError(state.round, int(np.flatnonzero(bad)[0]),
                                  f"non-finite iterate {name}")
    norms = np.sqrt(kernels.row_sq_norms(state.x))
    if (norms > DIVERGENCE_NORM).any():
        raise DivergenceError(state.round, int(np.argmax(norms)),
                              f"||x|| = {norms.max():.3g} exceeds {DIVERGENCE_NORM:.0e}")


def mix_variables(W, x, y, v):
    return mix(W, x), mix(W, y), mix(W, v)


def projection_radius_auto(problem, state, slack=10.0):
    """``slack * C_fy / mu`` with ``C_fy`` sampled at the initial iterates.

    ``C_fy`` is the largest local ``||grad_y f_i||`` (floored at 1) and
    ``mu`` the problem's strong-convexity estimate at the mean ``x``.
    """
    c = max(float(np.linalg.norm(problem.grad_upper_y(i, state.x[i], state.y[i])))
            for i in range(state.num_agents))
    mu = problem.strong_convexity(state.x.mean(axis=0))
    return slack * max(c, 1.0) / mu
