# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path recursions. Must stay bit-identical to ``_pykernels``."""
import numpy as np

from libc.math cimport fabs, isfinite


def ar_filter(const double[::1] coeffs, const double[::1] innov, const double[::1] init):
    cdef Py_ssize_t q = coeffs.shape[0]
    cdef Py_ssize_t m = innov.shape[0]
    cdef Py_ssize_t t, k
    cdef double acc
    out = np.empty(q + m, dtype=np.float64)
    cdef double[::1] x = out
    for t in range(q):
        x[t] = init[t]
    with nogil:
        for t in range(q, q + m):
            acc = 0.0
            for k in range(q):
                acc = acc + coeffs[k] * x[t - 1 - k]
            x[t] = acc + innov[t - q]
    return out


def euler_affine(double x0, double p0, double p1, double q0, double q1,
                 double h, double sqrt_h, Py_ssize_t substeps,
                 const double[::1] noise, double guard):
    cdef Py_ssize_t n = noise.shape[0] // substeps
    cdef Py_ssize_t i, j, idx = 0
    cdef Py_ssize_t bad = -1
    cdef double x = x0
    out = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] y = out
    y[0] = x0
    with nogil:
        for i in range(n):
            for j in range(substeps):
                x = x + (p0 + p1 * x) * h + (q0 + q1 * x) * sqrt_h * noise[idx]
                idx = idx + 1
            if not isfinite(x) or fabs(x) > guard:
                bad = i + 1
                break
            y[i + 1] = x
    return out, bad
