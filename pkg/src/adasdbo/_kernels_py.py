"""Pure-Python/numpy implementation of the per-round kernels.

Every reduction runs in a fixed left-to-right order so that results are
bitwise identical to the compiled kernels in ``_kernels.pyx``.
"""
import numpy as np


def row_sq_norms(block):
    """Squared Euclidean norm of every row, summed column by column."""
    out = np.zeros(block.shape[0])
    for k in range(block.shape[1]):
        col = block[:, k]
        out += col * col
    return out


def mix_rows(W, block):
    """Return ``W @ block`` with the sum over neighbours taken in index order."""
    out = np.zeros((W.shape[0], block.shape[1]))
    for j in range(W.shape[1]):
        out += W[:, j, None] * block[j][None, :]
    return out


def adaptive_update(x, y, v, gx, gy, gv, acc_x, acc_y, acc_v,
                    gamma_x, gamma_y, gamma_v, q, u, z):
    """Accumulate squared gradient norms and take one hierarchical step.

    All array arguments except the gradients are modified in place.  The
    denominators actually used are written to ``q`` (x), ``u`` (y) and ``z``
    (v).
    """
    acc_x += row_sq_norms(gx)
    acc_y += row_sq_norms(gy)
    acc_v += row_sq_norms(gv)
    mx = np.sqrt(acc_x)
    my = np.sqrt(acc_y)
    mv = np.sqrt(acc_v)
    u[:] = my
    z[:] = np.maximum(mv, my)
    q[:] = mx * z
    y -= (gamma_y / u)[:, None] * gy
    v -= (gamma_v / z)[:, None] * gv
    x -= (gamma_x / q)[:, None] * gx


def constant_update(x, y, v, gx, gy, gv, eta_x, eta_y, eta_v):
    y -= eta_y * gy
    v -= eta_v * gv
    x -= eta_x * gx


def project_rows(V, radius):
    """Project each row of ``V`` onto the centred ball of ``radius`` in place."""
    norms = np.sqrt(row_sq_norms(V))
    mask = norms > radius
    if mask.any():
        V[mask] *= (radius / norms[mask])[:, None]
