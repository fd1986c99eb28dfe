"""Gossip weight matrices and the mixing primitive.

Builders return a validated :class:`MixingMatrix` (doubly stochastic,
non-negative, ``rho_w < 1``).  Ring weights follow the usual self-weight
construction; ladder and random graphs use Metropolis-Hastings weights.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels

SUM_TOL = 1e-12


class NumericalError(RuntimeError):
    """Raised when an iterative numerical routine fails to converge."""


@dataclass(frozen=True)
class MixingMatrix:
    """Validated doubly stochastic gossip matrix.

    Parameters
    ----------
    entries : ndarray of shape (n, n)
        Row-major weights. Copied and made read-only.
    kind : str
        Name of the topology, informational only.
    """

    entries: np.ndarray
    kind: str = "custom"
    rho_w: float = field(init=False)

    def __post_init__(self):
        W = np.array(self.entries, dtype=np.float64, order="C")
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise ValueError(f"mixing matrix must be square, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("mixing matrix has non-finite entries")
        if np.any(W < 0):
            raise ValueError("mixing matrix has negative entries")
        rows = np.abs(W.sum(axis=1) - 1.0).max()
        cols = np.abs(W.sum(axis=0) - 1.0).max()
        if rows > SUM_TOL or cols > SUM_TOL:
            raise ValueError(
                f"mixing matrix is not doubly stochastic "
                f"(row dev {rows:.3g}, col dev {cols:.3g})")
        W.setflags(write=False)
        object.__setattr__(self, "entries", W)
        rho = spectral_gap(W)
        if not rho < 1.0:
            raise ValueError(f"rho_W = {rho:.6g} >= 1: graph is not connected/aperiodic")
        object.__setattr__(self, "rho_w", rho)

    @property
    def n(self):
        return self.entries.shape[0]


def _validate_n(n, minimum):
    if int(n) != n or n < minimum:
        raise ValueError(f"need an integer n >= {minimum}, got {n!r}")
    return int(n)


def build_ring(n, w):
    """Ring with self-weight ``w`` and ``(1 - w) / 2`` to each neighbour."""
    n = _validate_n(n, 2)
    if not 0.0 < w < 1.0:
        raise ValueError(f"ring self-weight must lie in (0, 1), got {w!r}")
    W = np.zeros((n, n))
    side = (1.0 - w) / 2.0
    for i in range(n):
        W[i, i] += w
        W[i, (i + 1) % n] += side
        W[i, (i - 1) % n] += side
    return MixingMatrix(W, kind="ring")


def build_complete(n):
    n = _validate_n(n, 1)
    return MixingMatrix(np.full((n, n), 1.0 / n), kind="complete")


def metropolis_weights(adjacency):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    A = np.asarray(adjacency, dtype=bool)
    if A.shape[0] != A.shape[1] or not np.array_equal(A, A.T):
        raise ValueError("adjacency must be square and symmetric")
    A = A & ~np.eye(A.shape[0], dtype=bool)
    deg = A.sum(axis=1)
    n = A.shape[0]
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if A[i, j]:
                W[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        W[i, i] = 1.0 - W[i].sum()
    return W


def build_ladder(n):
    """Ladder graph: two paths of ``n/2`` nodes joined by rungs.

    Nodes ``0..n/2-1`` form one rail and ``n/2..n-1`` the other; node ``k``
    is joined to ``k + n/2``.  For ``n = 4`` this is the 4-cycle.
    """
    n = _validate_n(n, 4)
    if n % 2:
        raise ValueError(f"ladder topology needs an even n, got {n}")
    h = n // 2
    A = np.zeros((n, n), dtype=bool)
    for k in range(h - 1):
        A[k, k + 1] = A[k + 1, k] = True
        A[h + k, h + k + 1] = A[h + k + 1, h + k] = True
    for k in range(h):
        A[k, h + k] = A[h + k, k] = True
    return MixingMatrix(metropolis_weights(A), kind="ladder")


def _connected(A):
    n = A.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(A[i] & ~seen):
            seen[j] = True
            stack.append(j)
    return bool(seen.all())


def build_random(n, edge_prob, seed, max_tries=1000):
    """Erdos-Renyi graph with Metropolis weights, redrawn until connected."""
    n = _validate_n(n, 2)
    if not 0.0 < edge_prob <= 1.0:
        raise ValueError(f"edge_prob must lie in (0, 1], got {edge_prob!r}")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < edge_prob, k=1)
        A = upper | upper.T
        if _connected(A):
            return MixingMatrix(metropolis_weights(A), kind="random")
    raise RuntimeError(
        f"no connected random graph with n={n}, edge_prob={edge_prob} "
        f"after {max_tries} draws")


def spectral_gap(W, tol=1e-10, max_iter=10_000):
    """Return ``rho_W = ||W - J||_2^2`` by power iteration on ``(W-J)^T (W-J)``.

    Accepts a :class:`MixingMatrix` or a raw square array (no validation).
    """
    if isinstance(W, MixingMatrix):
        W = W.entries
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    B = W - np.full((n, n), 1.0 / n)
    M = B.T @ B
    if not np.any(M):
        return 0.0
    b = np.random.default_rng(0).standard_normal(n)
    b /= np.linalg.norm(b)
    lam = 0.0
    for it in range(max_iter):
        Mb = M @ b
        nrm = np.linalg.norm(Mb)
        if nrm == 0.0:
            return 0.0
        new = float(b @ Mb)
        b = Mb / nrm
        if it > 0 and abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    raise NumericalError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(last estimate {lam!r}, last change {abs(new - lam)!r})")


def mix(W, block):
    """Gossip step ``W @ block``; preserves column means up to round-off."""
    entries = W.entries if isinstance(W, MixingMatrix) else np.asarray(W, dtype=np.float64)
    block = np.ascontiguousarray(block, dtype=np.float64)
    squeeze = block.ndim == 1
    if squeeze:
        block = block[:, None]
    if block.ndim != 2 or block.shape[0] != entries.shape[1]:
        raise ValueError(
            f"block with {block.shape[0]} rows cannot be mixed by a "
            f"{entries.shape[0]}x{entries.shape[1]} matrix")
    out = kernels.mix_rows(entries, block)
    return out[:, 0] if squeeze else out
