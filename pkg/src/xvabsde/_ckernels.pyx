# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Must stay numerically identical to ``_pykernels``."""

import numpy as np

from libc.stdint cimport uint64_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STREAM_MULT = 0xD1B54A32D192ED03ULL
cdef double TWO_M53 = 1.1102230246251565e-16  # 2**-53


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def uniforms(unsigned long long seed, unsigned long long stream,
             long long path_start, long long n_paths, long long n_draws):
    """Counter-based uniforms in (0, 1), one row per path."""
    out = np.empty((n_paths, n_draws), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t base = _mix(_mix(<uint64_t>seed + GOLDEN) ^ ((<uint64_t>stream + 1) * STREAM_MULT))
    cdef uint64_t key, z
    cdef long long p, j
    with nogil:
        for p in range(n_paths):
            key = _mix(base + (<uint64_t>(path_start + p) + 1) * GOLDEN)
            for j in range(n_draws):
                z = _mix(key + (<uint64_t>j + 1) * GOLDEN)
                o[p, j] = (<double>(z >> 11) + 0.5) * TWO_M53
    return out


def thomas(double[::1] a, double[::1] b, double[::1] c, double[::1] d):
    """Solve a tridiagonal system; a[0] and c[-1] are ignored."""
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t i
    cdef double m
    cp_arr = np.empty(n, dtype=np.float64)
    x_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] cp = cp_arr
    cdef double[::1] x = x_arr
    with nogil:
        cp[0] = c[0] / b[0]
        x[0] = d[0] / b[0]
        for i in range(1, n):
            m = b[i] - a[i] * cp[i - 1]
            cp[i] = c[i] / m
            x[i] = (d[i] - a[i] * x[i - 1]) / m
        for i in range(n - 2, -1, -1):
            x[i] = x[i] - cp[i] * x[i + 1]
    return x_arr
