# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the fused kernels.

Must stay numerically interchangeable with numpy_backend: same
signatures, same float64 contract, accumulation in plain double loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, sqrt

cnp.import_array()

cdef double INV_SQRT2 = 1.0 / sqrt(2.0)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.14159265358979323846)


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double mx, s
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            y[i, j] = exp(x[i, j] - mx)
            s += y[i, j]
        for j in range(n):
            y[i, j] /= s
    return out


def softmax_bwd(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double inner
    for i in range(m):
        inner = 0.0
        for j in range(n):
            inner += dy[i, j] * y[i, j]
        for j in range(n):
            dx[i, j] = y[i, j] * (dy[i, j] - inner)
    return out


def layernorm_fwd(double[:, ::1] x, double[::1] gain, double[::1] bias, double eps):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] yo = np.empty((m, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xho = np.empty((m, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ro = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] y = yo
    cdef double[:, ::1] xhat = xho
    cdef double[::1] rstd = ro
    cdef double mu, var, d, r
    for i in range(m):
        mu = 0.0
        for j in range(n):
            mu += x[i, j]
        mu /= n
        var = 0.0
        for j in range(n):
            d = x[i, j] - mu
            var += d * d
        var /= n
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(n):
            xhat[i, j] = (x[i, j] - mu) * r
            y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return yo, xho, ro


def layernorm_bwd(double[:, ::1] xhat, double[::1] rstd, double[::1] gain, double[:, ::1] dy):
    cdef Py_ssize_t m = xhat.shape[0], n = xhat.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dxo = np.empty((m, n), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dgo = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dbo = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] dx = dxo
    cdef double[::1] dgain = dgo
    cdef double[::1] dbias = dbo
    cdef double m1, m2, dxh
    for i in range(m):
        m1 = 0.0
        m2 = 0.0
        for j in range(n):
            dxh = dy[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= n
        m2 /= n
        for j in range(n):
            dxh = dy[i, j] * gain[j]
            dx[i, j] = (dxh - m1 - xhat[i, j] * m2) * rstd[i]
            dgain[j] += dy[i, j] * xhat[i, j]
            dbias[j] += dy[i, j]
    return dxo, dgo, dbo


def gelu_fwd(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    for i in range(n):
        y[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))
    return out


def gelu_bwd(double[::1] x, double[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] dx = out
    cdef double cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
        pdf = exp(-0.5 * x[i] * x[i]) * INV_SQRT_2PI
        dx[i] = dy[i] * (cdf + x[i] * pdf)
    return out


def dwconv_fwd(double[:, ::1] x, double[:, ::1] w, double[::1] b):
    cdef Py_ssize_t l = x.shape[0], d = x.shape[1], k = w.shape[0]
    cdef Py_ssize_t off = k // 2, i, j, c, src
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((l, d), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double acc
    for i in range(l):
        for c in range(d):
            acc = b[c]
            for j in range(k):
                src = i + j - off
                if 0 <= src < l:
                    acc += w[j, c] * x[src, c]
            y[i, c] = acc
    return out


def dwconv_bwd(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dy):
    cdef Py_ssize_t l = x.shape[0], d = x.shape[1], k = w.shape[0]
    cdef Py_ssize_t off = k // 2, i, j, c, src
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dxo = np.zeros((l, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dwo = np.zeros((k, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dbo = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] dx = dxo
    cdef double[:, ::1] dw = dwo
    cdef double[::1] db = dbo
    for i in range(l):
        for c in range(d):
            db[c] += dy[i, c]
            for j in range(k):
                src = i + j - off
                if 0 <= src < l:
                    dx[src, c] += w[j, c] * dy[i, c]
                    dw[j, c] += dy[i, c] * x[src, c]
    return dxo, dwo, dbo


def gateconv_fwd(double[:, ::1] x, double[::1] w, double b):
    cdef Py_ssize_t l = x.shape[0], d = x.shape[1], k = w.shape[0]
    cdef Py_ssize_t off = k // 2, i, j, c, src
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((l, d), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double acc
    for i in range(l):
        for c in range(d):
            acc = b
            for j in range(k):
                src = c + j - off
                if 0 <= src < d:
                    acc += w[j] * x[i, src]
            y[i, c] = acc
    return out


def gateconv_bwd(double[:, ::1] x, double[::1] w, double[:, ::1] dy):
    cdef Py_ssize_t l = x.shape[0], d = x.shape[1], k = w.shape[0]
    cdef Py_ssize_t off = k // 2, i, j, c, src
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dxo = np.zeros((l, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dwo = np.zeros(k, dtype=np.float64)
    cdef double[::1] dw = dwo
    cdef double[:, ::1] dx = dxo
    cdef double db = 0.0
    for i in range(l):
        for c in range(d):
            db += dy[i, c]
            for j in range(k):
                src = c + j - off
                if 0 <= src < d:
                    dx[i, src] += w[j] * dy[i, c]
                    dw[j] += dy[i, c] * x[i, src]
    return dxo, dwo, db
