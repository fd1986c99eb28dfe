"""Bilevel problem oracles.

A problem exposes, for every agent ``i``, the upper objective ``f_i(x, y)``,
the lower objective ``l_i(x, y)`` (strongly convex in ``y``) and the five
derivative actions consumed by the algorithms:

* ``grad_upper_x``  -- gradient of ``f_i`` in ``x``
* ``grad_upper_y``  -- gradient of ``f_i`` in ``y``
* ``grad_lower_y``  -- gradient of ``l_i`` in ``y``
* ``hvp_lower_yy``  -- ``d2 l_i / dy dy`` applied to ``v``
* ``jvp_lower_xy``  -- ``d2 l_i / dx dy`` applied to ``v`` (result in ``R^p``)

All derivatives are hand-coded; the test suite checks them against central
finite differences.
"""
from abc import ABC, abstractmethod

import numpy as np
from scipy.special import expit, log_softmax, softmax


class UnsupportedMetricError(ValueError):
    """The problem has no held-out data for the requested metric."""


class BilevelProblem(ABC):
    """Per-agent oracle interface for ``min_x (1/n) sum_i f_i(x, y*(x))``."""

    upper_dim: int
    lower_dim: int
    num_agents: int

    # -- argument checking -------------------------------------------------
    def _check(self, agent, x, y, v=None):
        if not 0 <= agent < self.num_agents:
            raise ValueError(f"agent index {agent} outside [0, {self.num_agents})")
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != (self.upper_dim,):
            raise ValueError(f"x has shape {x.shape}, expected ({self.upper_dim},)")
        if y.shape != (self.lower_dim,):
            raise ValueError(f"y has shape {y.shape}, expected ({self.lower_dim},)")
        if v is None:
            return x, y
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.lower_dim,):
            raise ValueError(f"v has shape {v.shape}, expected ({self.lower_dim},)")
        return x, y, v

    # -- oracles -------------------------------------------------------------
    @abstractmethod
    def upper_loss(self, agent, x, y): ...

    @abstractmethod
    def lower_loss(self, agent, x, y): ...

    @abstractmethod
    def grad_upper_x(self, agent, x, y): ...

    @abstractmethod
    def grad_upper_y(self, agent, x, y): ...

    @abstractmethod
    def grad_lower_y(self, agent, x, y): ...

    @abstractmethod
    def hvp_lower_yy(self, agent, x, y, v): ...

    @abstractmethod
    def jvp_lower_xy(self, agent, x, y, v): ...

    # -- helpers shared by the algorithms and the oracle ---------------------
    def strong_convexity(self, x):
        """Lower bound on the strong-convexity modulus of ``l`` in ``y`` at ``x``."""
        return 1.0

    @property
    def has_heldout(self):
        return False

    def accuracy(self, x, y):
        raise UnsupportedMetricError(f"{type(self).__name__} has no held-out data")

    def mean_upper_loss(self, x, y):
        return sum(self.upper_loss(i, x, y) for i in range(self.num_agents)) / self.num_agents

    def mean_lower_loss(self, x, y):
        return sum(self.lower_loss(i, x, y) for i in range(self.num_agents)) / self.num_agents

    def _mean(self, method, *args):
        out = method(0, *args)
        for i in range(1, self.num_agents):
            out = out + method(i, *args)
        return out / self.num_agents

    def mean_grad_upper_x(self, x, y):
        return self._mean(self.grad_upper_x, x, y)

    def mean_grad_upper_y(self, x, y):
        return self._mean(self.grad_upper_y, x, y)

    def mean_grad_lower_y(self, x, y):
        return self._mean(self.grad_lower_y, x, y)

    def mean_hvp_lower_yy(self, x, y, v):
        return self._mean(self.hvp_lower_yy, x, y, v)

    def mean_jvp_lower_xy(self, x, y, v):
        return self._mean(self.jvp_lower_xy, x, y, v)


class QuadraticBilevel(BilevelProblem):
    """Quadratic test instance with closed-form hypergradient.

    ``f_i(x, y) = 1/2 ||x - a - alpha_i||^2 + 1/2 ||y - b||^2`` and
    ``l_i(x, y) = 1/2 ||y - c x - delta_i||^2``.  The offsets ``alpha_i`` and
    ``delta_i`` make agents heterogeneous; when they sum to zero the averaged
    problem has ``y*(x) = c x`` and the lower Hessian is the identity.

    Parameters
    ----------
    a : array (p,)
    b : array (q,)
    c : array (q, p)
    upper_offsets : array (n, p), optional
    lower_offsets : array (n, q), optional
    num_agents : int, optional
        Required when no offsets are given.
    """

    def __init__(self, a, b, c, upper_offsets=None, lower_offsets=None, num_agents=None):
        self.a = np.asarray(a, dtype=np.float64).reshape(-1)
        self.b = np.asarray(b, dtype=np.float64).reshape(-1)
        self.c = np.asarray(c, dtype=np.float64).reshape(self.b.size, self.a.size)
        self.upper_dim = self.a.size
        self.lower_dim = self.b.size
        if num_agents is None:
            if upper_offsets is not None:
                num_agents = len(upper_offsets)
            elif lower_offsets is not None:
                num_agents = len(lower_offsets)
            else:
                num_agents = 1
        self.num_agents = int(num_agents)
        if upper_offsets is None:
            upper_offsets = np.zeros((self.num_agents, self.upper_dim))
        if lower_offsets is None:
            lower_offsets = np.zeros((self.num_agents, self.lower_dim))
        self.upper_offsets = np.asarray(upper_offsets, dtype=np.float64)
        self.lower_offsets = np.asarray(lower_offsets, dtype=np.float64)
        if self.upper_offsets.shape != (self.num_agents, self.upper_dim):
            raise ValueError(f"upper_offsets must have shape ({self.num_agents}, {self.upper_dim})")
        if self.lower_offsets.shape != (self.num_agents, self.lower_dim):
            raise ValueError(f"lower_offsets must have shape ({self.num_agents}, {self.lower_dim})")

    @classmethod
    def random(cls, num_agents, upper_dim, lower_dim, seed=0, scale=1.0, heterogeneity=1.0,
               coupling=1.0):
        """Draw a random instance with zero-mean per-agent offsets.

        ``scale`` sets the size of the targets ``a`` and ``b``, ``coupling`` the
        entry scale of ``c`` (entries ``N(0, coupling^2 / p)``) and
        ``heterogeneity`` the size of the offsets.
        """
        rng = np.random.default_rng(seed)
        a = scale * rng.standard_normal(upper_dim)
        b = scale * rng.standard_normal(lower_dim)
        c = coupling * rng.standard_normal((lower_dim, upper_dim)) / np.sqrt(upper_dim)
        up = heterogeneity * rng.standard_normal((num_agents, upper_dim))
        low = heterogeneity * rng.standard_normal((num_agents, lower_dim))
        up -= up.mean(axis=0)
        low -= low.mean(axis=0)
        return cls(a, b, c, up, low)

    def upper_loss(self, agent, x, y):
        x, y = self._check(agent, x, y)
        dx = x - self.a - self.upper_offsets[agent]
        dy = y - self.b
        return 0.5 * float(dx @ dx) + 0.5 * float(dy @ dy)

    def lower_loss(self, agent, x, y):
        x, y = self._check(agent, x, y)
        r = y - self.c @ x - self.lower_offsets[agent]
        return 0.5 * float(r @ r)

    def grad_upper_x(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return x - self.a - self.upper_offsets[agent]

    def grad_upper_y(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return y - self.b

    def grad_lower_y(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return y - self.c @ x - self.lower_offsets[agent]

    def hvp_lower_yy(self, agent, x, y, v):
        x, y, v = self._check(agent, x, y, v)
        return v.copy()

    def jvp_lower_xy(self, agent, x, y, v):
        x, y, v = self._check(agent, x, y, v)
        return -(self.c.T @ v)

    def lower_solution(self, x):
        """Closed-form minimiser of the averaged lower objective."""
        return self.c @ np.asarray(x, dtype=np.float64) + self.lower_offsets.mean(axis=0)

    def minimizer(self):
        """Closed-form minimiser of the averaged hyper-objective."""
        abar = self.a + self.upper_offsets.mean(axis=0)
        shift = self.b - self.lower_offsets.mean(axis=0)
        H = np.eye(self.upper_dim) + self.c.T @ self.c
        return np.linalg.solve(H, abar + self.c.T @ shift)


def quadratic_true_hypergradient(problem, x):
    """Analytic hypergradient of a :class:`QuadraticBilevel` instance.

    Substitutes ``y*(x) = c x + mean(delta)`` and ``v*(x) = y*(x) - b``
    (the lower Hessian is the identity) into
    ``grad Phi = grad_x f - (d2 l / dx dy) v*``.
    """
    if not isinstance(problem, QuadraticBilevel):
        raise TypeError("quadratic_true_hypergradient needs a QuadraticBilevel")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.upper_dim,):
        raise ValueError(f"x has shape {x.shape}, expected ({problem.upper_dim},)")
    y_star = problem.lower_solution(x)
    v_star = y_star - problem.b
    return x - problem.a - problem.upper_offsets.mean(axis=0) + problem.c.T @ v_star


def _psi(m):
    """Logistic loss ``log(1 + exp(-m))``."""
    return np.logaddexp(0.0, -m)


class SyntheticLogisticHPO(BilevelProblem):
    """Regularisation-weight tuning for logistic regression on synthetic data.

    ``x = lambda`` (one log-weight per feature), ``y = omega`` (model).
    ``f_i = sum_{D'_i} psi(y_e x_e^T omega)`` and
    ``l_i = sum_{D_i} psi(y_e x_e^T omega) + 1/2 sum_j exp(lambda_j) omega_j^2``
    with ``psi(m) = log(1 + exp(-m))``.  Losses are sums, not means.

    Parameters
    ----------
    train, val : list of (features, labels) pairs, one per agent
    test : (features, labels), optional
        Evaluation set for accuracy; defaults to the union of ``val``.
    """

    def __init__(self, train, val, test=None, r=None, omega_star=None):
        if len(train) != len(val) or not train:
            raise ValueError("need one train and one validation set per agent")
        self.train = [(np.asarray(X, dtype=np.float64), np.asarray(t, dtype=np.float64))
                      for X, t in train]
        self.val = [(np.asarray(X, dtype=np.float64), np.asarray(t, dtype=np.float64))
                    for X, t in val]
        self.num_agents = len(self.train)
        self.upper_dim = self.lower_dim = self.train[0][0].shape[1]
        for X, t in self.train + self.val:
            if X.ndim != 2 or X.shape[1] != self.upper_dim or X.shape[0] != t.shape[0]:
                raise ValueError("inconsistent feature/label shapes")
        if test is None:
            test = (np.vstack([X for X, _ in self.val]), np.concatenate([t for _, t in self.val]))
        self.test = (np.asarray(test[0], dtype=np.float64), np.asarray(test[1], dtype=np.float64))
        self.r = r
        self.omega_star = omega_star

    @classmethod
    def from_datasets(cls, shards, r=None, omega_star=None, test=None):
        """Build from ``data.generate_synthetic`` output."""
        train = [(tr.features, tr.labels) for tr, _ in shards]
        val = [(va.features, va.labels) for _, va in shards]
        if test is not None:
            test = (test.features, test.labels)
        return cls(train, val, test=test, r=r, omega_star=omega_star)

    @staticmethod
    def _margins(X, t, w):
        return t * (X @ w)

    def upper_loss(self, agent, x, y):
        x, y = self._check(agent, x, y)
        X, t = self.val[agent]
        return float(_psi(self._margins(X, t, y)).sum())

    def lower_loss(self, agent, x, y):
        x, y = self._check(agent, x, y)
        X, t = self.train[agent]
        return float(_psi(self._margins(X, t, y)).sum()) + 0.5 * float(np.exp(x) @ (y * y))

    def grad_upper_x(self, agent, x, y):
        self._check(agent, x, y)
        return np.zeros(self.upper_dim)

    @staticmethod
    def _data_grad(X, t, w):
        # psi'(m) = -1 / (1 + e^m) = -expit(-m)
        m = t * (X @ w)
        return X.T @ (-t * expit(-m))

    @staticmethod
    def _data_hvp(X, t, w, v):
        m = t * (X @ w)
        curv = expit(m) * expit(-m) * t * t
        return X.T @ (curv * (X @ v))

    def grad_upper_y(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return self._data_grad(*self.val[agent], y)

    def grad_lower_y(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return self._data_grad(*self.train[agent], y) + np.exp(x) * y

    def hvp_lower_yy(self, agent, x, y, v):
        x, y, v = self._check(agent, x, y, v)
        return self._data_hvp(*self.train[agent], y, v) + np.exp(x) * v

    def jvp_lower_xy(self, agent, x, y, v):
        x, y, v = self._check(agent, x, y, v)
        return np.exp(x) * y * v

    def strong_convexity(self, x):
        return float(np.exp(np.min(x)))

    @property
    def has_heldout(self):
        return True

    def accuracy(self, x, y):
        """Fraction of evaluation samples with ``sign(x_e^T omega) == sign(y_e)``."""
        X, t = self.test
        if t.size == 0:
            return float("nan")
        return float(np.mean(np.sign(X @ np.asarray(y)) == np.sign(t)))


class SoftmaxHPO(BilevelProblem):
    """Per-feature regularisation tuning for multinomial logistic regression.

    ``omega`` is a ``c x p`` matrix flattened row-major (``q = c p``) and
    ``lambda`` has one entry per feature.  Both objectives use the mean
    cross-entropy over the local set; the lower one adds
    ``1/(c p) sum_j sum_k exp(lambda_k) omega_jk^2``.
    """

    def __init__(self, train, val, num_classes, test=None):
        if len(train) != len(val) or not train:
            raise ValueError("need one train and one validation set per agent")
        self.num_classes = int(num_classes)
        self.train = [(np.asarray(X, dtype=np.float64), np.asarray(t, dtype=np.int64))
                      for X, t in train]
        self.val = [(np.asarray(X, dtype=np.float64), np.asarray(t, dtype=np.int64))
                    for X, t in val]
        self.num_agents = len(self.train)
        self.num_features = self.train[0][0].shape[1]
        self.upper_dim = self.num_features
        self.lower_dim = self.num_classes * self.num_features
        for X, t in self.train + self.val:
            if X.ndim != 2 or X.shape[1] != self.num_features or X.shape[0] != t.shape[0]:
                raise ValueError("inconsistent feature/label shapes")
            if t.size and (t.min() < 0 or t.max() >= self.num_classes):
                raise ValueError(f"class labels must lie in [0, {self.num_classes})")
        if test is None:
            test = (np.vstack([X for X, _ in self.val]), np.concatenate([t for _, t in self.val]))
        self.test = (np.asarray(test[0], dtype=np.float64), np.asarray(test[1], dtype=np.int64))
        self._reg = 1.0 / (self.num_classes * self.num_features)

    @classmethod
    def from_datasets(cls, train_shards, val_shards, num_classes, test=None):
        train = [(d.features, d.labels) for d in train_shards]
        val = [(d.features, d.labels) for d in val_shards]
        if test is not None:
            test = (test.features, test.labels)
        return cls(train, val, num_classes, test=test)

    def _mat(self, w):
        return w.reshape(self.num_classes, self.num_features)

    def _ce(self, X, t, w):
        if t.size == 0:
            return 0.0
        logp = log_softmax(X @ self._mat(w).T, axis=1)
        return float(-logp[np.arange(t.size), t].mean())

    def _ce_grad(self, X, t, w):
        if t.size == 0:
            return np.zeros(self.lower_dim)
        P = softmax(X @ self._mat(w).T, axis=1)
        P[np.arange(t.size), t] -= 1.0
        return (P.T @ X).reshape(-1) / t.size

    def _ce_hvp(self, X, t, w, v):
        if t.size == 0:
            return np.zeros(self.lower_dim)
        P = softmax(X @ self._mat(w).T, axis=1)
        A = X @ self._mat(v).T
        S = P * (A - (P * A).sum(axis=1, keepdims=True))
        return (S.T @ X).reshape(-1) / t.size

    def upper_loss(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return self._ce(*self.val[agent], y)

    def lower_loss(self, agent, x, y):
        x, y = self._check(agent, x, y)
        W = self._mat(y)
        return self._ce(*self.train[agent], y) + self._reg * float(((W * W) @ np.exp(x)).sum())

    def grad_upper_x(self, agent, x, y):
        self._check(agent, x, y)
        return np.zeros(self.upper_dim)

    def grad_upper_y(self, agent, x, y):
        x, y = self._check(agent, x, y)
        return self._ce_grad(*self.val[agent], y)

    def grad_lower_y(self, agent, x, y):
        x, y = self._check(agent, x, y)
        reg = 2.0 * self._reg * (self._mat(y) * np.exp(x)).reshape(-1)
        return self._ce_grad(*self.train[agent], y) + reg

    def hvp_lower_yy(self, agent, x, y, v):
        x, y, v = self._check(agent, x, y, v)
        reg = 2.0 * self._reg * (self._mat(v) * np.exp(x)).reshape(-1)
        return self._ce_hvp(*self.train[agent], y, v) + reg

    def jvp_lower_xy(self, agent, x, y, v):
        x, y, v = self._check(agent, x, y, v)
        return 2.0 * self._reg * np.exp(x) * (self._mat(y) * self._mat(v)).sum(axis=0)

    def strong_convexity(self, x):
        return 2.0 * self._reg * float(np.exp(np.min(x)))

    @property
    def has_heldout(self):
        return True

    def accuracy(self, x, y):
        """Top-1 accuracy of ``argmax_j (omega x_e)_j`` on the evaluation set."""
        X, t = self.test
        if t.size == 0:
            return float("nan")
        pred = np.argmax(X @ self._mat(np.asarray(y)).T, axis=1)
        return float(np.mean(pred == t))
