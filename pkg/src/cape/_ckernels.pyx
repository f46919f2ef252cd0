# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels; see ``cape._pykernels`` for the reference versions."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    cdef double mx, s
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(m):
            mx = x[i, 0]
            for j in range(1, n):
                if x[i, j] > mx:
                    mx = x[i, j]
            for j in range(n):
                y[i, j] = x[i, j] - mx
    # numpy's exp is vectorised; scalar libm exp was the bottleneck here
    np.exp(out, out=out)
    with nogil:
        for i in range(m):
            s = 0.0
            for j in range(n):
                s = s + y[i, j]
            for j in range(n):
                y[i, j] = y[i, j] / s
    return out


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    cdef double dot
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] dx = out
    with nogil:
        for i in range(m):
            dot = 0.0
            for j in range(n):
                dot = dot + g[i, j] * y[i, j]
            for j in range(n):
                dx[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def layer_norm_forward(const double[:, ::1] x, const double[::1] gamma,
                       const double[::1] beta, double eps):
    cdef Py_ssize_t m = x.shape[0], d = x.shape[1], i, j
    cdef double mean, var, r, t
    out_a = np.empty((m, d), dtype=np.float64)
    xhat_a = np.empty((m, d), dtype=np.float64)
    rstd_a = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] out = out_a
    cdef double[:, ::1] xhat = xhat_a
    cdef double[::1] rstd = rstd_a
    with nogil:
        for i in range(m):
            mean = 0.0
            for j in range(d):
                mean = mean + x[i, j]
            mean = mean / d
            var = 0.0
            for j in range(d):
                t = x[i, j] - mean
                var = var + t * t
            var = var / d
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                t = (x[i, j] - mean) * r
                xhat[i, j] = t
                out[i, j] = t * gamma[j] + beta[j]
    return out_a, xhat_a, rstd_a


def layer_norm_backward(const double[:, ::1] g, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gamma):
    cdef Py_ssize_t m = g.shape[0], d = g.shape[1], i, j
    cdef double a, b, dxh
    dx_a = np.empty((m, d), dtype=np.float64)
    dgamma_a = np.zeros(d, dtype=np.float64)
    dbeta_a = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dx_a
    cdef double[::1] dgamma = dgamma_a
    cdef double[::1] dbeta = dbeta_a
    with nogil:
        for i in range(m):
            a = 0.0
            b = 0.0
            for j in range(d):
                dxh = g[i, j] * gamma[j]
                a = a + dxh
                b = b + dxh * xhat[i, j]
                dgamma[j] = dgamma[j] + g[i, j] * xhat[i, j]
                dbeta[j] = dbeta[j] + g[i, j]
            a = a / d
            b = b / d
            for j in range(d):
                dx[i, j] = rstd[i] * (g[i, j] * gamma[j] - a - xhat[i, j] * b)
    return dx_a, dgamma_a, dbeta_a


def sweep_counts(const double[::1] max_seen, const double[::1] max_unseen,
                 const cnp.uint8_t[::1] tie_to_seen, const cnp.uint8_t[::1] hit_seen,
                 const cnp.uint8_t[::1] hit_unseen, const cnp.uint8_t[::1] label_seen,
                 const double[::1] biases):
    cdef Py_ssize_t n = max_seen.shape[0], nb = biases.shape[0], i, k
    cdef double b, v
    cdef long cs, cu
    cdef bint pick_seen, hit
    seen_a = np.zeros(nb, dtype=np.int64)
    unseen_a = np.zeros(nb, dtype=np.int64)
    cdef cnp.int64_t[::1] seen_hits = seen_a
    cdef cnp.int64_t[::1] unseen_hits = unseen_a
    with nogil:
        for k in range(nb):
            b = biases[k]
            cs = 0
            cu = 0
            for i in range(n):
                v = max_unseen[i] + b
                pick_seen = max_seen[i] > v or (max_seen[i] == v and tie_to_seen[i])
                hit = hit_seen[i] if pick_seen else hit_unseen[i]
                if hit:
                    if label_seen[i]:
                        cs = cs + 1
                    else:
                        cu = cu + 1
            seen_hits[k] = cs
            unseen_hits[k] = cu
    return seen_a, unseen_a
