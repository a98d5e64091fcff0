"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np
import scipy.sparse as sp


def log_esp_table(log_lam, k):
    log_lam = np.asarray(log_lam, dtype=np.float64)
    n = log_lam.shape[0]
    out = np.empty((k + 1, n + 1), dtype=np.float64)
    out[0, :] = 0.0
    out[1:, 0] = -np.inf
    for j in range(1, n + 1):
        out[1:, j] = np.logaddexp(out[1:, j - 1], log_lam[j - 1] + out[:-1, j - 1])
    return out


def select_eigvecs(log_e, log_lam, k, uniforms):
    i = len(log_lam)
    rem = k
    chosen = []
    while rem > 0 and i > 0:
        if i == rem:
            marg = 1.0
        else:
            marg = np.exp(log_lam[i - 1] + log_e[rem - 1, i - 1] - log_e[rem, i])
        if uniforms[i - 1] < marg:
            chosen.append(i - 1)
            rem -= 1
        i -= 1
    return np.array(chosen[::-1], dtype=np.int64)


def csr_spmm(indptr, indices, data, dense):
    n_rows = len(indptr) - 1
    mat = sp.csr_matrix((data, indices, indptr), shape=(n_rows, dense.shape[0]))
    return np.asarray(mat @ dense, dtype=np.float64)
