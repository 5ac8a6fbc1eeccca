# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels. Same contracts as ``_kernels_py``.

Reductions run in a fixed left-to-right order so results are deterministic.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh
from cython cimport floating

cnp.import_array()

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def softmax_rows(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    out = np.empty((n, w), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] y = out
    cdef double m, s
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, w):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(w):
                y[i, j] = exp(x[i, j] - m)
                s += y[i, j]
            for j in range(w):
                y[i, j] = y[i, j] / s
    return out


def softmax_rows_backward(floating[:, ::1] y, floating[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], w = y.shape[1], i, j
    out = np.empty((n, w), dtype=np.asarray(y).dtype)
    cdef floating[:, ::1] gx = out
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(w):
                dot += gy[i, j] * y[i, j]
            for j in range(w):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layernorm_rows(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    dt = np.asarray(x).dtype
    out = np.empty((n, w), dtype=dt)
    xhat_arr = np.empty((n, w), dtype=dt)
    rstd_arr = np.empty(n, dtype=dt)
    cdef floating[:, ::1] y = out
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    cdef double mu, var, r, d
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(w):
                mu += x[i, j]
            mu /= w
            var = 0.0
            for j in range(w):
                d = x[i, j] - mu
                var += d * d
            var /= w
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(w):
                xhat[i, j] = (x[i, j] - mu) * r
                y[i, j] = xhat[i, j] * gamma[j] + beta[j]
    return out, xhat_arr, rstd_arr


def layernorm_rows_backward(floating[:, ::1] gy, floating[:, ::1] xhat,
                            floating[::1] rstd, floating[::1] gamma):
    cdef Py_ssize_t n = gy.shape[0], w = gy.shape[1], i, j
    dt = np.asarray(gy).dtype
    gx_arr = np.empty((n, w), dtype=dt)
    gg_arr = np.zeros(w, dtype=dt)
    gb_arr = np.zeros(w, dtype=dt)
    cdef floating[:, ::1] gx = gx_arr
    cdef floating[::1] gg = gg_arr
    cdef floating[::1] gb = gb_arr
    cdef double m1, m2, g
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(w):
                g = gy[i, j] * gamma[j]
                m1 += g
                m2 += g * xhat[i, j]
                gg[j] += gy[i, j] * xhat[i, j]
                gb[j] += gy[i, j]
            m1 /= w
            m2 /= w
            for j in range(w):
                gx[i, j] = (gy[i, j] * gamma[j] - m1 - xhat[i, j] * m2) * rstd[i]
    return gx_arr, gg_arr, gb_arr


def gelu(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    dt = np.asarray(x).dtype
    out = np.empty((n, w), dtype=dt)
    t_arr = np.empty((n, w), dtype=dt)
    cdef floating[:, ::1] y = out
    cdef floating[:, ::1] t = t_arr
    cdef double v, th
    with nogil:
        for i in range(n):
            for j in range(w):
                v = x[i, j]
                th = tanh(GELU_C * (v + GELU_A * v * v * v))
                t[i, j] = th
                y[i, j] = 0.5 * v * (1.0 + th)
    return out, t_arr


def gelu_backward(floating[:, ::1] x, floating[:, ::1] t, floating[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], w = x.shape[1], i, j
    out = np.empty((n, w), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] gx = out
    cdef double v, th
    with nogil:
        for i in range(n):
            for j in range(w):
                v = x[i, j]
                th = t[i, j]
                gx[i, j] = gy[i, j] * (0.5 * (1.0 + th)
                                       + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * v * v))
    return out
