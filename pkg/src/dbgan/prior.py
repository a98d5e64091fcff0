"""Structure-aware latent prior: DPP prototype selection followed by a Gaussian KDE.

The DPP kernel is ``L = I + A_norm`` where ``A_norm`` is the symmetric
normalized adjacency without self-loops. Its spectrum lies in ``[0, 2]``, so
every principal minor is a valid (non-negative) unnormalized probability.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from . import kernels
from .graph import Graph, NormalizedAdjacency

log = logging.getLogger(__name__)

EXACT_THRESHOLD = 4000
RANK_TOL = 1e-10


class PriorError(ValueError):
    pass


@dataclass
class DppKernel:
    """Symmetric PSD L-ensemble kernel, stored sparse; eigenpairs cached on demand."""

    matrix: sp.csr_matrix
    _eig: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def eig(self):
        if self._eig is None:
            vals, vecs = np.linalg.eigh(self.dense())
            self._eig = (np.clip(vals, 0.0, None), vecs)
        return self._eig

    @property
    def eigvals(self) -> np.ndarray:
        return self.eig()[0]

    def effective_rank(self) -> int:
        return int(np.sum(self.eigvals > RANK_TOL))


def build_dpp_kernel(adj: NormalizedAdjacency, tol: float = 1e-10) -> DppKernel:
    a = sp.csr_matrix(adj.matrix, dtype=np.float64)
    asym = abs(a - a.T)
    if asym.nnz and asym.max() > tol:
        raise PriorError(f"adjacency is not symmetric (max deviation {asym.max():.3g})")
    mat = sp.csr_matrix(sp.identity(a.shape[0], format="csr") + a)
    mat.sort_indices()
    return DppKernel(mat)


def kernel_from_dense(l: np.ndarray) -> DppKernel:
    """Wrap an explicit symmetric PSD matrix (tests and experiments)."""
    l = np.asarray(l, dtype=np.float64)
    if l.ndim != 2 or l.shape[0] != l.shape[1] or not np.allclose(l, l.T, atol=1e-10):
        raise PriorError("DPP kernel must be a symmetric square matrix")
    return DppKernel(sp.csr_matrix(l))


def log_esp(eigvals, k: int) -> float:
    """``log e_k(eigvals)``, the log normalizer of a k-DPP."""
    lam = np.clip(np.asarray(eigvals, dtype=np.float64), 0.0, None)
    with np.errstate(divide="ignore"):
        table = kernels.log_esp_table(np.log(lam), k)
    return float(table[k, -1])


def kdpp_subset_probability(kernel: DppKernel, subset, k: int) -> float:
    """``det(L_S) / e_k(eigenvalues of L)`` for ``|S| = k``."""
    subset = np.asarray(sorted(set(int(i) for i in subset)), dtype=np.int64)
    if len(subset) != k:
        raise PriorError(f"subset has {len(subset)} distinct items, expected {k}")
    if k == 0:
        return 1.0
    sub = kernel.dense()[np.ix_(subset, subset)]
    sign, logdet = np.linalg.slogdet(sub)
    if sign <= 0:
        return 0.0
    return float(np.exp(logdet - log_esp(kernel.eigvals, k)))


@dataclass(frozen=True)
class PrototypeSet:
    indices: np.ndarray
    method: str

    def __len__(self):
        return len(self.indices)


def sample_kdpp(
    kernel: DppKernel,
    m: int,
    seed=None,
    exact_threshold: int = EXACT_THRESHOLD,
) -> PrototypeSet:
    """Exact k-DPP sample of size ``m``.

    Eigenvectors are chosen through the elementary-symmetric-polynomial
    recursion (in log space, so large ``n``/``m`` do not overflow); items are
    then drawn one at a time from the resulting projection DPP, each with
    probability proportional to its squared norm in the not-yet-explained part
    of the subspace.
    """
    n = kernel.n
    if n > exact_threshold:
        raise PriorError(
            f"n={n} exceeds the exact sampling threshold {exact_threshold}; use greedy_map_dpp"
        )
    if m < 0:
        raise PriorError("m must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam, vecs = kernel.eig()
    rank = int(np.sum(lam > RANK_TOL))
    if m > rank:
        raise PriorError(f"m={m} exceeds the kernel's effective rank {rank}")
    if m == 0:
        return PrototypeSet(np.zeros(0, dtype=np.int64), "exact-kdpp")
    lam = np.where(lam > RANK_TOL, lam, 0.0)
    with np.errstate(divide="ignore"):
        log_lam = np.log(lam)
    table = kernels.log_esp_table(log_lam, m)
    chosen_vecs = kernels.select_eigvecs(table, log_lam, m, rng.random(n))
    v = vecs[:, chosen_vecs]

    resid = np.einsum("ij,ij->i", v, v)
    basis = np.zeros((n, m))
    picked = np.zeros(n, dtype=bool)
    items = []
    for t in range(m):
        w = np.where(picked, 0.0, np.clip(resid, 0.0, None))
        cdf = np.cumsum(w)
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, n - 1)
        while w[i] <= 0:  # guard against landing on a zero-width bin at the edge
            i -= 1
        items.append(i)
        picked[i] = True
        col = v @ v[i] - basis[:, :t] @ basis[i, :t]
        e = col / np.sqrt(resid[i])
        basis[:, t] = e
        resid = resid - e * e
    return PrototypeSet(np.sort(np.array(items, dtype=np.int64)), "exact-kdpp")


def greedy_map_dpp(kernel: DppKernel, m: int, tol: float = RANK_TOL) -> PrototypeSet:
    """Greedy ``log det(L_S)`` maximization with incremental Cholesky updates.

    Each step adds the item with the largest conditional variance
    ``L_ii - L_iS L_SS^-1 L_Si`` (lowest index on ties). Stops early, with a
    warning, once no remaining item has variance above ``tol``.
    """
    n = kernel.n
    if m > n:
        raise PriorError(f"m={m} exceeds n={n}")
    mat = kernel.matrix
    d2 = np.asarray(mat.diagonal(), dtype=np.float64).copy()
    basis = np.zeros((n, m))
    items = []
    for t in range(m):
        j = int(np.argmax(d2))
        if d2[j] <= tol:
            log.warning("greedy MAP stopped at %d of %d prototypes (rank deficiency)", t, m)
            break
        items.append(j)
        col = mat.getrow(j).toarray().ravel()
        e = (col - basis[:, :t] @ basis[j, :t]) / np.sqrt(d2[j])
        basis[:, t] = e
        d2 = d2 - e * e
        d2[items] = -np.inf
    return PrototypeSet(np.sort(np.array(items, dtype=np.int64)), "greedy-map")


def pca_fit(x: np.ndarray, q: int):
    """Centered PCA. Returns ``(scores, components, explained_ratio)``.

    Each component's largest-magnitude entry is made positive.
    """
    x = np.asarray(x, dtype=np.float64)
    m, d = x.shape
    if q < 1 or q > min(m, d):
        raise PriorError(f"PCA dimension q={q} must lie in [1, min(m, d)={min(m, d)}]")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:q].copy()
    flip = np.sign(comps[np.arange(q), np.argmax(np.abs(comps), axis=1)])
    flip[flip == 0] = 1.0
    comps *= flip[:, None]
    total = float(np.sum(s * s))
    ratio = float(np.sum(s[:q] ** 2) / total) if total > 0 else 1.0
    return xc @ comps.T, comps, ratio


def pca_project(x: np.ndarray, q: int) -> np.ndarray:
    return pca_fit(x, q)[0]


@dataclass(frozen=True)
class PriorKDE:
    """Isotropic Gaussian mixture with one component per prototype."""

    centers: np.ndarray
    bandwidth: float

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def log_density(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        m, q = self.centers.shape
        b = self.bandwidth
        sq = (
            np.sum(z * z, axis=1)[:, None]
            - 2.0 * z @ self.centers.T
            + np.sum(self.centers * self.centers, axis=1)[None, :]
        )
        sq = np.maximum(sq, 0.0)
        return logsumexp(-sq / (2.0 * b * b), axis=1) - np.log(m) - 0.5 * q * np.log(2.0 * np.pi * b * b)

    def density(self, z):
        out = np.exp(self.log_density(z))
        return float(out[0]) if np.ndim(z) == 1 else out

    def sample(self, count: int, rng) -> np.ndarray:
        return kde_sample(self, count, rng)


@dataclass(frozen=True)
class StandardNormalPrior:
    dim: int

    def density(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        out = np.exp(-0.5 * np.sum(z * z, axis=1)) / (2.0 * np.pi) ** (self.dim / 2)
        return float(out[0]) if out.shape[0] == 1 else out

    def sample(self, count: int, rng) -> np.ndarray:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        return rng.standard_normal((count, self.dim))


Prior = Union[PriorKDE, StandardNormalPrior]


def scott_bandwidth(h: np.ndarray) -> float:
    m, q = h.shape
    sigma = float(np.mean(np.std(h, axis=0, ddof=1)))
    if not sigma > 0:
        raise PriorError("degenerate prototype embeddings (zero spread); jitter or fix the bandwidth")
    return sigma * m ** (-1.0 / (q + 4))


def fit_kde(h: np.ndarray, bandwidth: Union[str, float] = "scott") -> PriorKDE:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if not np.all(np.isfinite(h)):
        raise PriorError("KDE centers must be finite")
    if bandwidth == "scott":
        if h.shape[0] < 2:
            raise PriorError("Scott's rule needs at least two centers")
        b = scott_bandwidth(h)
    else:
        b = float(bandwidth)
        if not b > 0:
            raise PriorError(f"bandwidth must be positive, got {bandwidth}")
    return PriorKDE(h.copy(), b)


def kde_density(prior: PriorKDE, z):
    return prior.density(z)


def kde_sample(prior: PriorKDE, count: int, seed=None) -> np.ndarray:
    if count < 1:
        raise PriorError("count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m, q = prior.centers.shape
    idx = rng.integers(0, m, size=count)
    return prior.centers[idx] + prior.bandwidth * rng.standard_normal((count, q))


def select_prototypes(
    adj: NormalizedAdjacency, m: int, seed=None, exact_threshold: int = EXACT_THRESHOLD
) -> PrototypeSet:
    kernel = build_dpp_kernel(adj)
    if kernel.n <= exact_threshold:
        # every bipartite component of the graph adds a zero eigenvalue to I + A_norm
        rank = kernel.effective_rank()
        if m > rank:
            log.warning("lowering prototype count from %d to the kernel rank %d", m, rank)
            m = rank
        return sample_kdpp(kernel, m, seed, exact_threshold)
    return greedy_map_dpp(kernel, m)


def estimate_prior(
    g: Graph,
    adj: NormalizedAdjacency,
    q: int,
    m: int = 500,
    seed=None,
    mode: str = "pde",
    bandwidth: Union[str, float] = "scott",
    exact_threshold: int = EXACT_THRESHOLD,
):
    """Build the latent prior.

    ``mode`` is ``"pde"`` (DPP prototypes -> PCA -> KDE), ``"x-only"`` (PCA of
    all node features -> KDE) or ``"standard-normal"``.
    Returns ``(prior, prototypes)``; ``prototypes`` is None outside pde mode.
    """
    if mode == "standard-normal":
        return StandardNormalPrior(q), None
    if mode == "x-only":
        return fit_kde(pca_project(g.features, q), bandwidth), None
    if mode != "pde":
        raise PriorError(f"unknown prior mode {mode!r}")
    if adj.self_loops:
        raise PriorError("the DPP kernel uses the adjacency normalized without self-loops")
    m = min(m, g.n)
    protos = select_prototypes(adj, m, seed, exact_threshold)
    h = pca_project(g.features[protos.indices], q)
    return fit_kde(h, bandwidth), protos


def write_prototypes(indices_path, centers_path, prior: PriorKDE, prototypes: PrototypeSet):
    np.savetxt(indices_path, prototypes.indices, fmt="%d")
    np.savetxt(centers_path, prior.centers, delimiter=",", fmt="%.17g")
