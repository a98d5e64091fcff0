# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the k-DPP sampler and sparse propagation.

Every routine here has a behaviourally identical twin in ``_fallback.py``;
``dbgan.kernels`` decides which one is used at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, INFINITY

cnp.import_array()

cdef double LOGE2 = 0.693147180559945309417232121458176568


cdef inline double _logaddexp(double x, double y) nogil:
    # same branch structure as numpy's npy_logaddexp, so results agree bitwise
    cdef double tmp
    if x == y:
        return x + LOGE2
    tmp = x - y
    if tmp > 0:
        return x + log1p(exp(-tmp))
    elif tmp <= 0:
        return y + log1p(exp(tmp))
    return tmp


def log_esp_table(const double[::1] log_lam, Py_ssize_t k):
    """Log of the elementary symmetric polynomial table.

    ``out[l, j] = log e_l(lam[0], ..., lam[j-1])`` for ``l <= k``.
    """
    cdef Py_ssize_t n = log_lam.shape[0]
    out_arr = np.empty((k + 1, n + 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t l, j
    with nogil:
        for j in range(n + 1):
            out[0, j] = 0.0
        for l in range(1, k + 1):
            out[l, 0] = -INFINITY
        for j in range(1, n + 1):
            for l in range(1, k + 1):
                out[l, j] = _logaddexp(out[l, j - 1], log_lam[j - 1] + out[l - 1, j - 1])
    return out_arr


def select_eigvecs(const double[:, ::1] log_e, const double[::1] log_lam,
                   Py_ssize_t k, const double[::1] uniforms):
    """Choose ``k`` eigenvector indices; ``uniforms[i]`` decides index ``i``."""
    cdef Py_ssize_t i = log_lam.shape[0]
    cdef Py_ssize_t rem = k
    cdef Py_ssize_t pos = 0
    cdef double marg
    chosen_arr = np.empty(k, dtype=np.int64)
    cdef cnp.int64_t[::1] chosen = chosen_arr
    with nogil:
        while rem > 0 and i > 0:
            if i == rem:
                marg = 1.0
            else:
                marg = exp(log_lam[i - 1] + log_e[rem - 1, i - 1] - log_e[rem, i])
            if uniforms[i - 1] < marg:
                chosen[pos] = i - 1
                pos += 1
                rem -= 1
            i -= 1
    return chosen_arr[:pos][::-1].copy()


def csr_spmm(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
             const double[::1] data, const double[:, ::1] dense):
    """``S @ dense`` for a CSR matrix ``S``; rows accumulate in stored order."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = dense.shape[1]
    out_arr = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, p, c, col
    cdef double v
    with nogil:
        for r in range(n_rows):
            for p in range(indptr[r], indptr[r + 1]):
                col = indices[p]
                v = data[p]
                for c in range(n_cols):
                    out[r, c] += v * dense[col, c]
    return out_arr
