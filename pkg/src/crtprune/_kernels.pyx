# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the spanned-tree sweeps (see ``_kernels_py``)."""

import numpy as np

from libc.math cimport INFINITY


def previous_smaller(const double[::1] b):
    """par[k] = max{j < k : b[j] < b[k]}, or -1."""
    cdef Py_ssize_t n = b.shape[0], k, top = 0
    par_arr = np.empty(n, dtype=np.int64)
    stack_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] par = par_arr
    cdef long long[::1] stack = stack_arr
    for k in range(n):
        while top > 0 and b[stack[top - 1]] >= b[k]:
            top -= 1
        par[k] = stack[top - 1] if top > 0 else -1
        stack[top] = k
        top += 1
    return par_arr


cdef inline double _own(const long long[::1] ptr, const double[::1] ph,
                        const double[::1] pmin, Py_ssize_t k, double x) nogil:
    # prefix minimum over points of leaf k with height <= x
    cdef Py_ssize_t lo = ptr[k], hi = ptr[k + 1], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if ph[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    if lo == ptr[k]:
        return INFINITY
    return pmin[lo - 1]


def path_min_clocks(const double[::1] b, const double[::1] H,
                    const long long[::1] par, const long long[::1] ptr,
                    const double[::1] ph, const double[::1] pmin):
    """Smallest cut clock on the root-to-leaf path of every leaf."""
    cdef Py_ssize_t n = b.shape[0], k, j
    out_arr = np.empty(n, dtype=np.float64)
    below_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] below = below_arr
    cdef double v
    with nogil:
        for k in range(n):
            j = par[k]
            if j < 0:
                below[k] = INFINITY
            else:
                v = _own(ptr, ph, pmin, j, b[k])
                below[k] = v if v < below[j] else below[j]
            v = _own(ptr, ph, pmin, k, H[k])
            out[k] = v if v < below[k] else below[k]
    return out_arr
