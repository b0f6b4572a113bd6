# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels for the tensor engine.

Mirrors ``_kernels_py`` one-to-one. Arrays are (rows, n) float64, C order.
"""
import numpy as np
from libc.math cimport exp, sqrt, INFINITY


def softmax_fwd(const double[:, ::1] x, mask=None):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef const unsigned char[:, ::1] m
    cdef double mx, s, v
    if mask is None:
        with nogil:
            for i in range(rows):
                mx = x[i, 0]
                for j in range(1, n):
                    if x[i, j] > mx:
                        mx = x[i, j]
                s = 0.0
                for j in range(n):
                    v = exp(x[i, j] - mx)
                    out[i, j] = v
                    s = s + v
                for j in range(n):
                    out[i, j] = out[i, j] / s
        return out_arr
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    with nogil:
        for i in range(rows):
            mx = -INFINITY
            for j in range(n):
                if m[i, j] and x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(n):
                if m[i, j]:
                    v = exp(x[i, j] - mx)
                    out[i, j] = v
                    s = s + v
                else:
                    out[i, j] = 0.0
            if s > 0.0:
                for j in range(n):
                    out[i, j] = out[i, j] / s
    return out_arr


def softmax_bwd(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    gx_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double dot
    with nogil:
        for i in range(rows):
            dot = 0.0
            for j in range(n):
                dot = dot + gy[i, j] * y[i, j]
            for j in range(n):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return gx_arr


def layernorm_fwd(const double[:, ::1] x, const double[::1] gamma,
                  const double[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1], i, j
    y_arr = np.empty((rows, d), dtype=np.float64)
    xhat_arr = np.empty((rows, d), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mean, var, c, r
    with nogil:
        for i in range(rows):
            mean = 0.0
            for j in range(d):
                mean = mean + x[i, j]
            mean = mean / d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mean
                var = var + c * c
            var = var / d
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                c = (x[i, j] - mean) * r
                xhat[i, j] = c
                y[i, j] = c * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_bwd(const double[:, ::1] gy, const double[:, ::1] xhat,
                  const double[::1] rstd, const double[::1] gamma):
    cdef Py_ssize_t rows = gy.shape[0], d = gy.shape[1], i, j
    gx_arr = np.empty((rows, d), dtype=np.float64)
    dgamma_arr = np.zeros(d, dtype=np.float64)
    dbeta_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double mg, mgx, g
    with nogil:
        for i in range(rows):
            mg = 0.0
            mgx = 0.0
            for j in range(d):
                g = gy[i, j] * gamma[j]
                mg = mg + g
                mgx = mgx + g * xhat[i, j]
                dgamma[j] = dgamma[j] + gy[i, j] * xhat[i, j]
                dbeta[j] = dbeta[j] + gy[i, j]
            mg = mg / d
            mgx = mgx / d
            for j in range(d):
                g = gy[i, j] * gamma[j]
                gx[i, j] = rstd[i] * (g - mg - xhat[i, j] * mgx)
    return gx_arr, dgamma_arr, dbeta_arr


def silu_fwd(const double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    y_arr = np.empty((rows, n), dtype=np.float64)
    sig_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] sig = sig_arr
    cdef double s
    with nogil:
        for i in range(rows):
            for j in range(n):
                s = 1.0 / (1.0 + exp(-x[i, j]))
                sig[i, j] = s
                y[i, j] = x[i, j] * s
    return y_arr, sig_arr


def silu_bwd(const double[:, ::1] x, const double[:, ::1] sig, const double[:, ::1] gy):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    gx_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double s
    with nogil:
        for i in range(rows):
            for j in range(n):
                s = sig[i, j]
                gx[i, j] = gy[i, j] * s * (1.0 + x[i, j] * (1.0 - s))
    return gx_arr
