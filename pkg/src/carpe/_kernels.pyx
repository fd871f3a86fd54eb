# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused elementwise/reduction loops the numpy
fallback spreads over several temporaries. Float64 only, C-contiguous."""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf, exp, sqrt, INFINITY

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865475244
cdef double INV_SQRT_2PI = 0.3989422804014326779

NAME = "compiled"


def gelu_forward(x):
    shape = x.shape
    cdef double[::1] xf = np.ascontiguousarray(x).ravel()
    out_arr = np.empty(xf.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double v
    for i in range(n):
        v = xf[i]
        out[i] = 0.5 * v * (1.0 + erf(v * INV_SQRT2))
    return out_arr.reshape(shape)


def gelu_backward(x, gy):
    shape = x.shape
    cdef double[::1] xf = np.ascontiguousarray(x).ravel()
    cdef double[::1] gf = np.ascontiguousarray(gy).ravel()
    out_arr = np.empty(xf.shape[0])
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double v, cdf, pdf
    for i in range(n):
        v = xf[i]
        cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
        pdf = exp(-0.5 * v * v) * INV_SQRT_2PI
        out[i] = gf[i] * (cdf + v * pdf)
    return out_arr.reshape(shape)


def layernorm_forward(double[:, ::1] x, double[::1] gamma, double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=1] mean = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] rstd = np.empty(n)
    cdef double[:, ::1] yv = y
    cdef double[::1] mv = mean, rv = rstd
    cdef Py_ssize_t i, j
    cdef double s, var, mu, r
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        var = 0.0
        for j in range(d):
            s = x[i, j] - mu
            var += s * s
        r = 1.0 / sqrt(var / d + eps)
        mv[i] = mu
        rv[i] = r
        for j in range(d):
            yv[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]
    return y, mean, rstd


def layernorm_backward(double[:, ::1] x, double[::1] gamma, double[::1] mean,
                       double[::1] rstd, double[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] gx = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=1] ggamma = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] gbeta = np.zeros(d)
    cdef double[:, ::1] gxv = gx
    cdef double[::1] ggv = ggamma, gbv = gbeta
    cdef Py_ssize_t i, j
    cdef double xhat, gxhat, m1, m2
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            gxhat = gy[i, j] * gamma[j]
            m1 += gxhat
            m2 += gxhat * xhat
            ggv[j] += gy[i, j] * xhat
            gbv[j] += gy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            gxhat = gy[i, j] * gamma[j]
            gxv[i, j] = rstd[i] * (gxhat - m1 - xhat * m2)
    return gx, ggamma, gbeta


def softmax_rows(double[:, ::1] scores):
    # Rows may contain -inf (masked positions); those get exactly 0.
    cdef Py_ssize_t n = scores.shape[0], d = scores.shape[1]
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, d))
    cdef double[:, ::1] pv = p
    cdef Py_ssize_t i, j
    cdef double mx, s, e
    for i in range(n):
        mx = -INFINITY
        for j in range(d):
            if scores[i, j] > mx:
                mx = scores[i, j]
        s = 0.0
        for j in range(d):
            if scores[i, j] == -INFINITY:
                pv[i, j] = 0.0
            else:
                e = exp(scores[i, j] - mx)
                pv[i, j] = e
                s += e
        for j in range(d):
            pv[i, j] /= s
    return p


def softmax_rows_backward(double[:, ::1] probs, double[:, ::1] gprobs):
    cdef Py_ssize_t n = probs.shape[0], d = probs.shape[1]
    cdef cnp.ndarray[double, ndim=2] gs = np.empty((n, d))
    cdef double[:, ::1] gv = gs
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += probs[i, j] * gprobs[i, j]
        for j in range(d):
            gv[i, j] = probs[i, j] * (gprobs[i, j] - dot)
    return gs


def adamw_update(p, g, m, v, long t, double lr, double beta1, double beta2,
                 double eps, double wd):
    cdef double[::1] pf = p.ravel()
    cdef double[::1] gf = np.ascontiguousarray(g).ravel()
    cdef double[::1] mf = m.ravel()
    cdef double[::1] vf = v.ravel()
    cdef Py_ssize_t i, n = pf.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double gi, mhat, vhat
    for i in range(n):
        gi = gf[i]
        mf[i] = beta1 * mf[i] + (1.0 - beta1) * gi
        vf[i] = beta2 * vf[i] + (1.0 - beta2) * gi * gi
        mhat = mf[i] / c1
        vhat = vf[i] / c2
        pf[i] -= lr * (mhat / (sqrt(vhat) + eps) + wd * pf[i])
