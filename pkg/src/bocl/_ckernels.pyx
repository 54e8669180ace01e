# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
from libc.math cimport exp, sqrt

cdef double SQRT5 = 2.23606797749978969640917366873127623544


def matern52_cross(a, b, lengthscale, double variance):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[::1] inv = 1.0 / np.ascontiguousarray(lengthscale, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], d = av.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, k
    cdef double sq, t, r
    for i in range(n):
        for j in range(m):
            sq = 0.0
            for k in range(d):
                t = (av[i, k] - bv[j, k]) * inv[k]
                sq += t * t
            r = sqrt(sq)
            ov[i, j] = variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * exp(-SQRT5 * r)
    return out


def matern52_gram_grad(x, lengthscale, double variance):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] inv = 1.0 / np.ascontiguousarray(lengthscale, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    kmat = np.empty((n, n), dtype=np.float64)
    dk = np.empty((d, n, n), dtype=np.float64)
    cdef double[:, ::1] kv = kmat
    cdef double[:, :, ::1] dv = dk
    cdef Py_ssize_t i, j, k
    cdef double sq, t, r, e, common, val
    for i in range(n):
        kv[i, i] = variance
        for k in range(d):
            dv[k, i, i] = 0.0
        for j in range(i + 1, n):
            sq = 0.0
            for k in range(d):
                t = (xv[i, k] - xv[j, k]) * inv[k]
                sq += t * t
            r = sqrt(sq)
            e = exp(-SQRT5 * r)
            val = variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * e
            kv[i, j] = val
            kv[j, i] = val
            common = (5.0 / 3.0) * variance * (1.0 + SQRT5 * r) * e
            for k in range(d):
                t = (xv[i, k] - xv[j, k]) * inv[k]
                dv[k, i, j] = common * t * t
                dv[k, j, i] = common * t * t
    return kmat, dk


def im2col(x, int kernel, int stride):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = (h - kernel) // stride + 1
    cdef Py_ssize_t wo = (w - kernel) // stride + 1
    out = np.empty((n * ho * wo, c * kernel * kernel), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t b, oi, oj, ch, ki, kj, row, col
    for b in range(n):
        for oi in range(ho):
            for oj in range(wo):
                row = (b * ho + oi) * wo + oj
                col = 0
                for ch in range(c):
                    for ki in range(kernel):
                        for kj in range(kernel):
                            ov[row, col] = xv[b, ch, oi * stride + ki, oj * stride + kj]
                            col += 1
    return out


def col2im(cols, shape, int kernel, int stride):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h - kernel) // stride + 1
    cdef Py_ssize_t wo = (w - kernel) // stride + 1
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        n * ho * wo, c * kernel * kernel
    )
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, oi, oj, ch, ki, kj, row, col
    for b in range(n):
        for oi in range(ho):
            for oj in range(wo):
                row = (b * ho + oi) * wo + oj
                col = 0
                for ch in range(c):
                    for ki in range(kernel):
                        for kj in range(kernel):
                            ov[b, ch, oi * stride + ki, oj * stride + kj] += cv[row, col]
                            col += 1
    return out


def matern52_predict_grad(z, x, lengthscale, double variance, alpha, lower):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] inv = 1.0 / np.ascontiguousarray(lengthscale, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef double[:, ::1] lv = np.ascontiguousarray(lower, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1]
    ks_arr = np.empty(n, dtype=np.float64)
    dks_arr = np.empty((n, d), dtype=np.float64)
    v_arr = np.empty(n, dtype=np.float64)
    w_arr = np.empty(n, dtype=np.float64)
    dmu_arr = np.zeros(d, dtype=np.float64)
    dvar_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] ks = ks_arr
    cdef double[:, ::1] dks = dks_arr
    cdef double[::1] v = v_arr
    cdef double[::1] w = w_arr
    cdef double[::1] dmu = dmu_arr
    cdef double[::1] dvar = dvar_arr
    cdef Py_ssize_t i, j, k
    cdef double sq, t, r, e, c, mu = 0.0, quad = 0.0
    for i in range(n):
        sq = 0.0
        for k in range(d):
            t = (zv[k] - xv[i, k]) * inv[k]
            sq += t * t
        r = sqrt(sq)
        e = exp(-SQRT5 * r)
        ks[i] = variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * sq) * e
        c = -(5.0 / 3.0) * variance * (1.0 + SQRT5 * r) * e
        for k in range(d):
            dks[i, k] = c * (zv[k] - xv[i, k]) * inv[k] * inv[k]
        mu += ks[i] * av[i]
    # v = L^-1 k, w = L^-T v
    for i in range(n):
        t = ks[i]
        for j in range(i):
            t -= lv[i, j] * v[j]
        v[i] = t / lv[i, i]
        quad += v[i] * v[i]
    for i in range(n - 1, -1, -1):
        t = v[i]
        for j in range(i + 1, n):
            t -= lv[j, i] * w[j]
        w[i] = t / lv[i, i]
    for i in range(n):
        for k in range(d):
            dmu[k] += dks[i, k] * av[i]
            dvar[k] += -2.0 * dks[i, k] * w[i]
    return mu, variance - quad, dmu_arr, dvar_arr
