# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels. Semantics mirror ``reference.py`` exactly."""

import numpy as np
from cython cimport floating
from libc.math cimport exp, log, sqrt, erf

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


def softmax_rows(floating[:, ::1] x, bint causal):
    cdef Py_ssize_t rows = x.shape[0], width = x.shape[1]
    out_arr = np.zeros((rows, width), dtype=np.asarray(x).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t r, j, last
    cdef floating m, s
    for r in range(rows):
        last = (r % width) if causal else width - 1
        m = x[r, 0]
        for j in range(1, last + 1):
            if x[r, j] > m:
                m = x[r, j]
        s = 0
        for j in range(last + 1):
            out[r, j] = exp(x[r, j] - m)
            s = s + out[r, j]
        for j in range(last + 1):
            out[r, j] = out[r, j] / s
    return out_arr


def softmax_rows_backward(floating[:, ::1] p, floating[:, ::1] dp):
    cdef Py_ssize_t rows = p.shape[0], width = p.shape[1]
    out_arr = np.empty((rows, width), dtype=np.asarray(p).dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t r, j
    cdef floating dot
    for r in range(rows):
        dot = 0
        for j in range(width):
            dot = dot + p[r, j] * dp[r, j]
        for j in range(width):
            out[r, j] = p[r, j] * (dp[r, j] - dot)
    return out_arr


def layernorm_forward(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], d = x.shape[1]
    dt = np.asarray(x).dtype
    y_arr = np.empty((rows, d), dtype=dt)
    xhat_arr = np.empty((rows, d), dtype=dt)
    rstd_arr = np.empty(rows, dtype=dt)
    cdef floating[:, ::1] y = y_arr
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[::1] rstd = rstd_arr
    cdef Py_ssize_t r, j
    cdef floating mu, var, c, rs
    for r in range(rows):
        mu = 0
        for j in range(d):
            mu = mu + x[r, j]
        mu = mu / d
        var = 0
        for j in range(d):
            c = x[r, j] - mu
            var = var + c * c
        var = var / d
        rs = 1.0 / sqrt(var + eps)
        rstd[r] = rs
        for j in range(d):
            c = (x[r, j] - mu) * rs
            xhat[r, j] = c
            y[r, j] = c * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_backward(floating[:, ::1] dy, floating[:, ::1] xhat, floating[::1] rstd, floating[::1] gamma):
    cdef Py_ssize_t rows = dy.shape[0], d = dy.shape[1]
    dt = np.asarray(dy).dtype
    dx_arr = np.empty((rows, d), dtype=dt)
    dg_arr = np.zeros(d, dtype=dt)
    db_arr = np.zeros(d, dtype=dt)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dg = dg_arr
    cdef floating[::1] db = db_arr
    cdef Py_ssize_t r, j
    cdef floating a, b, g
    for r in range(rows):
        a = 0
        b = 0
        for j in range(d):
            g = dy[r, j] * gamma[j]
            a = a + g
            b = b + g * xhat[r, j]
            dg[j] = dg[j] + dy[r, j] * xhat[r, j]
            db[j] = db[j] + dy[r, j]
        a = a / d
        b = b / d
        for j in range(d):
            dx[r, j] = rstd[r] * (dy[r, j] * gamma[j] - a - xhat[r, j] * b)
    return dx_arr, dg_arr, db_arr


def cross_entropy_rows(floating[:, ::1] logits, const long long[::1] targets, floating[::1] weights):
    cdef Py_ssize_t rows = logits.shape[0], v = logits.shape[1]
    grad_arr = np.zeros((rows, v), dtype=np.asarray(logits).dtype)
    cdef floating[:, ::1] grad = grad_arr
    cdef Py_ssize_t r, j, t
    cdef floating m, s, lse, w
    cdef double total = 0
    for r in range(rows):
        w = weights[r]
        if w == 0:
            continue
        t = targets[r]
        m = logits[r, 0]
        for j in range(1, v):
            if logits[r, j] > m:
                m = logits[r, j]
        s = 0
        for j in range(v):
            grad[r, j] = exp(logits[r, j] - m)
            s = s + grad[r, j]
        lse = m + log(s)
        total = total + w * (lse - logits[r, t])
        for j in range(v):
            grad[r, j] = w * (grad[r, j] / s)
        grad[r, t] = grad[r, t] - w
    return total, grad_arr


def gelu_forward(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] out = out_arr
    for i in range(n):
        out[i] = 0.5 * x[i] * (1.0 + erf(x[i] * INV_SQRT2))
    return out_arr


def gelu_backward(floating[::1] x, floating[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n, dtype=np.asarray(x).dtype)
    cdef floating[::1] out = out_arr
    cdef floating cdf, pdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erf(x[i] * INV_SQRT2))
        pdf = INV_SQRT2PI * exp(-0.5 * x[i] * x[i])
        out[i] = dy[i] * (cdf + x[i] * pdf)
    return out_arr


def scatter_add_rows(floating[:, ::1] out, const long long[::1] idx, floating[:, ::1] src):
    cdef Py_ssize_t m = idx.shape[0], d = src.shape[1], i, j
    cdef long long k
    for i in range(m):
        k = idx[i]
        if k < 0:
            continue
        for j in range(d):
            out[k, j] = out[k, j] + src[i, j]
    return np.asarray(out)
