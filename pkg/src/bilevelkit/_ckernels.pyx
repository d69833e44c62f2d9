# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-sample inner-loop kernels (see ``_pykernels`` for the reference)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()


cdef inline double _sigmoid(double z) nogil:
    cdef double ez
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


cdef inline double _softplus(double z) nogil:
    if z > 0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef inline double _dot(const double[:, ::1] X, Py_ssize_t j, const double[::1] u) nogil:
    cdef Py_ssize_t c
    cdef double acc = 0.0
    for c in range(X.shape[1]):
        acc += X[j, c] * u[c]
    return acc


cdef cnp.intp_t[::1] _index(object idx, Py_ssize_t n):
    if idx is None:
        return np.arange(n, dtype=np.intp)
    return np.ascontiguousarray(idx, dtype=np.intp)


def wlogistic_value(const double[:, ::1] X, const double[::1] y, const double[::1] w,
                    idx, const double[::1] omega):
    cdef cnp.intp_t[::1] rows = _index(idx, X.shape[0])
    cdef Py_ssize_t t, j, B = rows.shape[0]
    cdef double z, acc = 0.0
    with nogil:
        for t in range(B):
            j = rows[t]
            z = _dot(X, j, omega)
            acc += w[j] * (_softplus(z) - y[j] * z)
    return acc / B


def wlogistic_grad(const double[:, ::1] X, const double[::1] y, const double[::1] w,
                   idx, const double[::1] omega):
    cdef cnp.intp_t[::1] rows = _index(idx, X.shape[0])
    cdef Py_ssize_t t, j, c, B = rows.shape[0], d = X.shape[1]
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    cdef double r
    with nogil:
        for t in range(B):
            j = rows[t]
            r = w[j] * (_sigmoid(_dot(X, j, omega)) - y[j])
            for c in range(d):
                out[c] += r * X[j, c]
        for c in range(d):
            out[c] /= B
    return out_arr


def wlogistic_hvp(const double[:, ::1] X, const double[::1] w, idx,
                  const double[::1] omega, const double[::1] v):
    cdef cnp.intp_t[::1] rows = _index(idx, X.shape[0])
    cdef Py_ssize_t t, j, c, B = rows.shape[0], d = X.shape[1]
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    cdef double s, coef
    with nogil:
        for t in range(B):
            j = rows[t]
            s = _sigmoid(_dot(X, j, omega))
            coef = w[j] * s * (1.0 - s) * _dot(X, j, v)
            for c in range(d):
                out[c] += coef * X[j, c]
        for c in range(d):
            out[c] /= B
    return out_arr


def logistic_cross(const double[:, ::1] X, const double[::1] y, const double[::1] wp,
                   idx, const double[::1] omega, const double[::1] v):
    cdef cnp.intp_t[::1] rows = _index(idx, X.shape[0])
    cdef Py_ssize_t t, j, B = rows.shape[0]
    out_arr = np.zeros(X.shape[0])
    cdef double[::1] out = out_arr
    with nogil:
        for t in range(B):
            j = rows[t]
            out[j] = wp[j] * (_sigmoid(_dot(X, j, omega)) - y[j]) * _dot(X, j, v) / B
    return out_arr
