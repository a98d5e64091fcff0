"""Backend selection for the hot loops.

The Cython extension is used when it was built and ``DBGAN_PURE_PYTHON`` is
not set to a truthy value; otherwise the numpy/scipy fallback is used. Both
expose the same three functions with identical semantics.
"""

import os

import numpy as np

from . import _fallback

_force_pure = os.environ.get("DBGAN_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    if _force_pure:
        raise ImportError("pure-python backend forced")
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"


def log_esp_table(log_lam, k, backend=None):
    """Table of ``log e_l`` over prefixes of ``exp(log_lam)``, shape (k+1, n+1)."""
    impl = _resolve(backend)
    return impl.log_esp_table(np.ascontiguousarray(log_lam, dtype=np.float64), int(k))


def select_eigvecs(log_e, log_lam, k, uniforms, backend=None):
    """Eigenvector selection phase of exact k-DPP sampling (sorted indices)."""
    impl = _resolve(backend)
    return impl.select_eigvecs(
        np.ascontiguousarray(log_e, dtype=np.float64),
        np.ascontiguousarray(log_lam, dtype=np.float64),
        int(k),
        np.ascontiguousarray(uniforms, dtype=np.float64),
    )


def csr_spmm(mat, dense, backend=None):
    """Product of a scipy CSR matrix with a dense 2-D array."""
    impl = _resolve(backend)
    return impl.csr_spmm(
        np.ascontiguousarray(mat.indptr, dtype=np.int64),
        np.ascontiguousarray(mat.indices, dtype=np.int64),
        np.ascontiguousarray(mat.data, dtype=np.float64),
        np.ascontiguousarray(dense, dtype=np.float64),
    )


def _resolve(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {backend!r}")
