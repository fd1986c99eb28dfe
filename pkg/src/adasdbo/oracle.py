"""High-accuracy reference hypergradient on the network-averaged problem.

The lower problem is solved by a truncated Newton method (conjugate-gradient
directions from Hessian-vector products, Armijo backtracking); the linear
system for the auxiliary variable by plain conjugate gradients.  Both work
on the averaged oracles ``(1/n) sum_i`` and are warm-started from the
previous call.
"""
from dataclasses import dataclass

import numpy as np


class OracleFailure(RuntimeError):
    """A reference solver hit its iteration cap or lost positive curvature."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class OracleConfig:
    """Tolerances are relative to ``max(1, scale)`` of the quantity they bound.

    The lower solver scales by the lower gradient at ``y = 0``, the linear
    solve by the norm of its right-hand side.
    """

    inner_tol: float = 1e-9
    cg_tol: float = 1e-10
    max_inner_iters: int = 10_000
    max_cg_iters: int = 2_000

    def __post_init__(self):
        for name in ("inner_tol", "cg_tol"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {val!r}")
        for name in ("max_inner_iters", "max_cg_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def conjugate_gradient(matvec, rhs, x0=None, tol=1e-10, max_iter=2_000):
    """Solve ``A x = rhs`` for symmetric positive definite ``A`` given as ``matvec``.

    Stops when ``||A x - rhs|| <= tol``.  Raises :class:`OracleFailure` on
    non-positive curvature or when ``max_iter`` is reached.
    """
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=np.float64)
    r = rhs - matvec(x) if np.any(x) else rhs.copy()
    rr = float(r @ r)
    if np.sqrt(rr) <= tol:
        return x
    p = r.copy()
    for _ in range(max_iter):
        Ap = matvec(p)
        curv = float(p @ Ap)
        if not curv > 0.0:
            raise OracleFailure(f"non-positive curvature {curv!r} in conjugate gradients",
                                residual=np.sqrt(rr))
        alpha = rr / curv
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol:
            # recompute the true residual to guard against drift
            r_true = rhs - matvec(x)
            if np.linalg.norm(r_true) <= tol:
                return x
            r = r_true
            rr_new = float(r @ r)
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise OracleFailure(f"conjugate gradients did not reach {tol:.3g} in {max_iter} iterations",
                        residual=np.sqrt(rr))


def solve_lower(problem, x, cfg=OracleConfig(), y0=None):
    """Minimise the averaged lower objective in ``y`` for fixed ``x``.

    Returns ``y`` with ``||(1/n) sum_i grad_lower_y(x, y)|| <= inner_tol * s``
    where ``s = max(1, ||(1/n) sum_i grad_lower_y(x, 0)||)`` fixes the scale
    independently of the warm start ``y0``.
    """
    x = np.asarray(x, dtype=np.float64)
    zero = np.zeros(problem.lower_dim)
    g = problem.mean_grad_lower_y(x, zero)
    tol = cfg.inner_tol * max(1.0, float(np.linalg.norm(g)))
    y = zero if y0 is None else np.array(y0, dtype=np.float64)
    if y0 is not None:
        g = problem.mean_grad_lower_y(x, y)
    obj = problem.mean_lower_loss(x, y)
    for _ in range(cfg.max_inner_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return y
        # inexact Newton direction; forcing term keeps early steps cheap
        forcing = min(0.5, np.sqrt(gnorm)) * gnorm
        try:
            d = conjugate_gradient(lambda s: problem.mean_hvp_lower_yy(x, y, s), -g,
                                   tol=max(forcing, 0.1 * tol), max_iter=cfg.max_cg_iters)
        except OracleFailure:
            d = -g
        slope = float(g @ d)
        if not slope < 0.0:
            d, slope = -g, -gnorm ** 2
        step = 1.0
        g_new = None
        while True:
            y_new = y + step * d
            obj_new = problem.mean_lower_loss(x, y_new)
            if obj_new <= obj + 1e-4 * step * slope:
                break
            if step == 1.0:
                # near the solution objective differences drown in round-off;
                # a full step that halves the gradient norm is accepted as is
                g_new = problem.mean_grad_lower_y(x, y_new)
                if np.linalg.norm(g_new) <= 0.5 * gnorm:
                    break
                g_new = None
            step *= 0.5
            if step < 1e-20:
                raise OracleFailure(f"line search stalled at gradient norm {gnorm:.3g}",
                                    residual=gnorm)
        y, obj = y_new, obj_new
        g = problem.mean_grad_lower_y(x, y) if g_new is None else g_new
    raise OracleFailure(
        f"lower solver did not reach {tol:.3g} in {cfg.max_inner_iters} iterations",
        residual=float(np.linalg.norm(g)))


def solve_linear_system(problem, x, y, cfg=OracleConfig(), v0=None):
    """Solve ``(1/n) sum_i H_i v = (1/n) sum_i grad_y f_i`` at ``(x, y)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rhs = problem.mean_grad_upper_y(x, y)
    tol = cfg.cg_tol * max(1.0, float(np.linalg.norm(rhs)))
    if not np.any(rhs):
        return np.zeros(problem.lower_dim)

    def matvec(s):
        return problem.mean_hvp_lower_yy(x, y, s)

    v = conjugate_gradient(matvec, rhs, x0=v0, tol=tol, max_iter=cfg.max_cg_iters)
    res = float(np.linalg.norm(matvec(v) - rhs))
    if res > tol:
        raise OracleFailure(f"linear-system residual {res:.3g} exceeds {tol:.3g}", residual=res)
    return v


class HypergradientOracle:
    """Reference ``grad Phi(x)`` with a warm-start cache.

    One instance per run; the cache holds the last ``(y, v)`` pair and is
    not meant to be shared between threads.
    """

    def __init__(self, problem, cfg=OracleConfig()):
        self.problem = problem
        self.cfg = cfg
        self._y = None
        self._v = None

    def evaluate(self, x):
        """Return ``(grad_phi, y_hat, v_hat)`` at ``x``."""
        pb = self.problem
        x = np.asarray(x, dtype=np.float64)
        y = solve_lower(pb, x, self.cfg, y0=self._y)
        v = solve_linear_system(pb, x, y, self.cfg, v0=self._v)
        self._y, self._v = y, v
        grad = pb.mean_grad_upper_x(x, y) - pb.mean_jvp_lower_xy(x, y, v)
        return grad, y, v

    def hypergradient(self, x):
        return self.evaluate(x)[0]

    def stationarity(self, x):
        g = self.hypergradient(x)
        return float(g @ g)


def true_hypergradient(problem, x, cfg=OracleConfig()):
    """``grad Phi(x) = mean grad_x f - mean (d2 l / dx dy) v*`` at ``y*(x)``."""
    return HypergradientOracle(problem, cfg).hypergradient(x)


def stationarity(problem, x, cfg=OracleConfig()):
    """``||grad Phi(x)||^2``."""
    return HypergradientOracle(problem, cfg).stationarity(x)


def hyper_objective(problem, x, cfg=OracleConfig()):
    """``Phi(x)``: averaged upper loss at the lower solution."""
    y = solve_lower(problem, x, cfg)
    return problem.mean_upper_loss(np.asarray(x, dtype=np.float64), y)
