# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_fallback`` one-to-one."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def lfilter_zi0(const double[::1] b, const double[::1] a, const double[::1] x):
    """Direct-form recursion with zero initial state; ``a[0]`` must be 1."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nb = b.shape[0]
    cdef Py_ssize_t na = a.shape[0]
    cdef Py_ssize_t i, k
    cdef double acc
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] y = out_arr
    for i in range(n):
        acc = 0.0
        for k in range(nb):
            if k > i:
                break
            acc += b[k] * x[i - k]
        for k in range(1, na):
            if k > i:
                break
            acc -= a[k] * y[i - k]
        y[i] = acc
    return out_arr


def soft_threshold(const double[::1] x, const double[::1] kappa):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double v, t
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        v = x[i]
        t = kappa[i]
        if v > t:
            out[i] = v - t
        elif v < -t:
            out[i] = v + t
        else:
            out[i] = 0.0
    return out_arr


def diff_apply(const double[::1] x):
    """``D_f x`` for the (N-1) x N first-difference matrix."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    out_arr = np.empty(max(n - 1, 0), dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n - 1):
        out[i] = x[i + 1] - x[i]
    return out_arr


def diff_adjoint(const double[::1] y):
    """``D_f^T y``; output has one more sample than ``y``."""
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t i
    out_arr = np.zeros(m + 1, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(m):
        out[i] -= y[i]
        out[i + 1] += y[i]
    return out_arr


def count_nonzero_diffs(const double[::1] x, double tol):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, c = 0
    cdef double d
    for i in range(n - 1):
        d = x[i + 1] - x[i]
        if d > tol or d < -tol:
            c += 1
    return c
