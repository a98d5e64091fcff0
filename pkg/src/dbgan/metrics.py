"""Link-prediction and clustering metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit
from scipy.stats import rankdata

from .autodiff import no_grad
from .graph import normalize_adjacency
from .nn import encoder_forward


@dataclass
class LinkPredResult:
    auc: float
    ap: float
    pos_scores: np.ndarray = field(repr=False, default=None)
    neg_scores: np.ndarray = field(repr=False, default=None)


@dataclass
class ClusterResult:
    assignments: np.ndarray = field(repr=False)
    acc: float
    nmi: float
    ari: float


def edge_score(h: np.ndarray, i: int, j: int) -> float:
    n = h.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"node index out of range [0, {n})")
    return float(expit(h[i] @ h[j]))


def edge_scores(h: np.ndarray, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return expit(np.einsum("ij,ij->i", h[edges[:, 0]], h[edges[:, 1]]))


def compute_auc_ap(pos_scores, neg_scores):
    """Rank AUC (ties count one half) and step-interpolated average precision."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    scores = np.concatenate([pos, neg])
    ranks = rankdata(scores)
    n_pos, n_neg = pos.size, neg.size
    auc = (ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    order = np.argsort(-scores, kind="mergesort")
    s_sorted = scores[order]
    tp = np.cumsum(labels[order])
    # one threshold per distinct score: keep the last index of every tie block
    last = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp = tp[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return float(auc), ap


def link_prediction(h: np.ndarray, pos_edges, neg_edges) -> LinkPredResult:
    pos = edge_scores(h, pos_edges)
    neg = edge_scores(h, neg_edges)
    auc, ap = compute_auc_ap(pos, neg)
    return LinkPredResult(auc, ap, pos, neg)


def _sq_dists(x, centers):
    d = np.sum(x * x, axis=1)[:, None] - 2.0 * x @ centers.T + np.sum(centers * centers, axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(h: np.ndarray, k: int, seed=0, max_iter: int = 300, return_history: bool = False):
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded with the point farthest from its current
    center. With ``return_history`` the within-cluster sum of squares after
    every iteration is returned too.
    """
    x = np.asarray(h, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, n={n}]")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centers[:1]).ravel()
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[c] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centers[c:c + 1]).ravel())

    assign = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        new_assign = np.argmin(d, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(d[np.arange(n), assign]))
                centers[c] = x[far]
                assign[far] = c
                d[far] = 0.0
        history.append(float(np.sum(_sq_dists(x, centers)[np.arange(n), assign])))
    if return_history:
        return assign, history
    return assign


def contingency(assignments, labels) -> np.ndarray:
    a = np.asarray(assignments, dtype=np.int64)
    b = np.asarray(labels, dtype=np.int64)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    return table


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def clustering_metrics(assignments, labels, k: Optional[int] = None):
    """``(acc, nmi, ari)``: Hungarian-matched accuracy, arithmetic NMI, ARI."""
    a = np.asarray(assignments, dtype=np.int64)
    b = np.asarray(labels, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} assignments vs {b.shape[0]} labels")
    n = a.size
    table = contingency(a, b)

    rows, cols = linear_sum_assignment(-table)
    acc = table[rows, cols].sum() / n

    h_a = _entropy(table.sum(axis=1))
    h_b = _entropy(table.sum(axis=0))
    nz = table > 0
    pij = table[nz] / n
    pa = table.sum(axis=1)[:, None].repeat(table.shape[1], axis=1)[nz] / n
    pb = table.sum(axis=0)[None, :].repeat(table.shape[0], axis=0)[nz] / n
    mi = float(np.sum(pij * np.log(pij / (pa * pb))))
    denom = 0.5 * (h_a + h_b)
    if denom == 0:
        nmi = 1.0
    else:
        nmi = max(0.0, min(1.0, mi / denom))

    sum_ij = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / _comb2(n) if n > 1 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        ari = 1.0
    else:
        ari = (sum_ij - expected) / (max_index - expected)
    return float(acc), float(nmi), float(ari)


def cluster(h: np.ndarray, labels, k: Optional[int] = None, seed=0) -> ClusterResult:
    labels = np.asarray(labels, dtype=np.int64)
    k = k or int(labels.max()) + 1
    assign = kmeans(h, k, seed)
    acc, nmi, ari = clustering_metrics(assign, labels, k)
    return ClusterResult(assign, acc, nmi, ari)


def evaluate(params, g, split, k: Optional[int] = None, seed=0, cluster_task: bool = True):
    """Encode with the training adjacency, score held-out edges, optionally cluster.

    ``g`` must carry the same (preprocessed) features the model was trained on.
    """
    adj = normalize_adjacency(g.with_edges(split.train_pos), self_loops=True)
    with no_grad():
        h = encoder_forward(g.features, adj, params).data
    lp = link_prediction(h, split.test_pos, split.test_neg)
    clus = None
    if cluster_task:
        if g.labels is None:
            raise ValueError("clustering needs node labels")
        clus = cluster(h, g.labels, k or g.num_classes, seed)
    return lp, clus


def summarize(values: Sequence[float]):
    """Mean, standard deviation (ddof=0) and standard error of the mean."""
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std()) if v.size else float("nan")
    se = std / np.sqrt(v.size) if v.size else float("nan")
    return float(v.mean()), std, float(se)
