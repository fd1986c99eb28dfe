# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-round kernels.

Mirrors ``_kernels_py`` operation for operation; built with
``-ffp-contract=off`` so both backends round identically.
"""
import numpy as np
from libc.math cimport sqrt


def row_sq_norms(const double[:, ::1] block):
    cdef Py_ssize_t n = block.shape[0], d = block.shape[1], i, k
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for k in range(d):
                s = s + block[i, k] * block[i, k]
            o[i] = s
    return out


def mix_rows(const double[:, ::1] W, const double[:, ::1] block):
    cdef Py_ssize_t n = W.shape[0], m = W.shape[1], d = block.shape[1]
    cdef Py_ssize_t i, j, k
    out = np.zeros((n, d))
    cdef double[:, ::1] o = out
    cdef double w
    with nogil:
        for j in range(m):
            for i in range(n):
                w = W[i, j]
                for k in range(d):
                    o[i, k] = o[i, k] + w * block[j, k]
    return out


cdef inline double _sq(const double[:, ::1] g, Py_ssize_t i) nogil:
    cdef Py_ssize_t k
    cdef double s = 0.0
    for k in range(g.shape[1]):
        s = s + g[i, k] * g[i, k]
    return s


def adaptive_update(double[:, ::1] x, double[:, ::1] y, double[:, ::1] v,
                    const double[:, ::1] gx, const double[:, ::1] gy,
                    const double[:, ::1] gv,
                    double[::1] acc_x, double[::1] acc_y, double[::1] acc_v,
                    double gamma_x, double gamma_y, double gamma_v,
                    double[::1] q, double[::1] u, double[::1] z):
    cdef Py_ssize_t n = x.shape[0], i, k
    cdef double mx, my, mv, sx, sy, sv
    with nogil:
        for i in range(n):
            acc_x[i] = acc_x[i] + _sq(gx, i)
            acc_y[i] = acc_y[i] + _sq(gy, i)
            acc_v[i] = acc_v[i] + _sq(gv, i)
            mx = sqrt(acc_x[i])
            my = sqrt(acc_y[i])
            mv = sqrt(acc_v[i])
            u[i] = my
            z[i] = mv if mv > my else my
            q[i] = mx * z[i]
            sy = gamma_y / u[i]
            sv = gamma_v / z[i]
            sx = gamma_x / q[i]
            for k in range(y.shape[1]):
                y[i, k] = y[i, k] - sy * gy[i, k]
            for k in range(v.shape[1]):
                v[i, k] = v[i, k] - sv * gv[i, k]
            for k in range(x.shape[1]):
                x[i, k] = x[i, k] - sx * gx[i, k]


def constant_update(double[:, ::1] x, double[:, ::1] y, double[:, ::1] v,
                    const double[:, ::1] gx, const double[:, ::1] gy,
                    const double[:, ::1] gv,
                    double eta_x, double eta_y, double eta_v):
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(x.shape[0]):
            for k in range(y.shape[1]):
                y[i, k] = y[i, k] - eta_y * gy[i, k]
            for k in range(v.shape[1]):
                v[i, k] = v[i, k] - eta_v * gv[i, k]
            for k in range(x.shape[1]):
                x[i, k] = x[i, k] - eta_x * gx[i, k]


def project_rows(double[:, ::1] V, double radius):
    cdef Py_ssize_t i, k
    cdef double nrm, scale
    with nogil:
        for i in range(V.shape[0]):
            nrm = sqrt(_sq(V, i))
            if nrm > radius:
                scale = radius / nrm
                for k in range(V.shape[1]):
                    V[i, k] = V[i, k] * scale
