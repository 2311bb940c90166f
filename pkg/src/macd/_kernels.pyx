# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels. Mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def leaky_relu_fwd(const double[:, ::1] x, double slope):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double v
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            y[i, j] = v if v >= 0 else slope * v
    return out


def leaky_relu_bwd(const double[:, ::1] x, const double[:, ::1] dy, double slope):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] dx = out
    for i in range(n):
        for j in range(d):
            dx[i, j] = dy[i, j] if x[i, j] >= 0 else slope * dy[i, j]
    return out


def bn_train_fwd(const double[:, ::1] x, const double[::1] gamma, const double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    mean_a = np.zeros(d, dtype=np.float64)
    var_a = np.zeros(d, dtype=np.float64)
    out = np.empty((n, d), dtype=np.float64)
    cdef double[::1] mean = mean_a, var = var_a
    cdef double[:, ::1] y = out
    cdef double[::1] scale = np.empty(d, dtype=np.float64)
    cdef double c
    for i in range(n):
        for j in range(d):
            mean[j] += x[i, j]
    for j in range(d):
        mean[j] /= n
    for i in range(n):
        for j in range(d):
            c = x[i, j] - mean[j]
            var[j] += c * c
    for j in range(d):
        var[j] /= n
        scale[j] = gamma[j] / sqrt(var[j] + eps)
    for i in range(n):
        for j in range(d):
            y[i, j] = (x[i, j] - mean[j]) * scale[j] + beta[j]
    return out, mean_a, var_a


def bn_bwd(const double[:, ::1] x, const double[:, ::1] dy, const double[::1] gamma, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double[::1] mean = np.zeros(d, dtype=np.float64)
    cdef double[::1] inv = np.zeros(d, dtype=np.float64)
    dgamma_a = np.zeros(d, dtype=np.float64)
    dbeta_a = np.zeros(d, dtype=np.float64)
    out = np.empty((n, d), dtype=np.float64)
    cdef double[::1] dgamma = dgamma_a, dbeta = dbeta_a
    cdef double[:, ::1] dx = out
    cdef double c, xh
    for i in range(n):
        for j in range(d):
            mean[j] += x[i, j]
    for j in range(d):
        mean[j] /= n
    for i in range(n):
        for j in range(d):
            c = x[i, j] - mean[j]
            inv[j] += c * c
    for j in range(d):
        inv[j] = 1.0 / sqrt(inv[j] / n + eps)
    for i in range(n):
        for j in range(d):
            dbeta[j] += dy[i, j]
            dgamma[j] += dy[i, j] * (x[i, j] - mean[j]) * inv[j]
    for i in range(n):
        for j in range(d):
            xh = (x[i, j] - mean[j]) * inv[j]
            dx[i, j] = (gamma[j] * inv[j] / n) * (n * dy[i, j] - dbeta[j] - xh * dgamma[j])
    return out, dgamma_a, dbeta_a


def masked_sq_err(const double[:, ::1] xhat, const double[:, ::1] x, const double[:, ::1] m):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double s = 0.0, diff
    cdef Py_ssize_t count = 0
    for i in range(n):
        for j in range(d):
            if m[i, j] != 0:
                diff = xhat[i, j] - x[i, j]
                s += diff * diff
                count += 1
    return s, count


def spot_sum(const double[:, ::1] values, const cnp.intp_t[::1] indptr, const cnp.intp_t[::1] indices):
    cdef Py_ssize_t n = indptr.shape[0] - 1, d = values.shape[1], i, k, j, r
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            r = indices[k]
            for j in range(d):
                o[i, j] += values[r, j]
    return out


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double bc1, double bc2, double eps):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double gi
    for i in range(n):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        p[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
