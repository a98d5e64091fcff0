"""Graph loading, normalized adjacency operators and link-prediction splits.

File formats
------------
edges file
    One edge per line, two whitespace-separated 0-indexed node ids. Lines
    starting with ``#`` and blank lines are ignored.
features file
    One node per line, ``d`` comma-separated reals. Row ``i`` is node ``i``;
    the number of rows fixes the node count.
labels file
    One integer class id per line.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class GraphFormatError(ValueError):
    """Malformed or inconsistent graph input."""


@dataclass(frozen=True)
class Graph:
    """Undirected, unweighted attributed graph.

    ``edges`` is an ``(E, 2)`` int64 array of unique pairs with ``i < j``,
    sorted lexicographically.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        self.validate()

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1

    def validate(self):
        if self.n < 1:
            raise GraphFormatError("graph needs at least one node")
        e = self.edges
        if len(e):
            if e.min() < 0 or e.max() >= self.n:
                raise GraphFormatError(f"edge endpoint out of range [0, {self.n})")
            if np.any(e[:, 0] >= e[:, 1]):
                raise GraphFormatError("edges must be stored as (i, j) with i < j")
            keys = e[:, 0] * self.n + e[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise GraphFormatError("duplicate edges")
        if self.features.ndim != 2 or self.features.shape[0] != self.n:
            raise GraphFormatError(
                f"feature matrix has shape {self.features.shape}, expected ({self.n}, d)"
            )
        if not np.all(np.isfinite(self.features)):
            raise GraphFormatError("feature matrix contains NaN or Inf")
        if self.labels is not None:
            if self.labels.shape != (self.n,):
                raise GraphFormatError(f"expected {self.n} labels, got {self.labels.shape[0]}")
            if self.labels.min() < 0:
                raise GraphFormatError("labels must be non-negative")

    def with_edges(self, edges) -> "Graph":
        """Same nodes, features and labels over a different edge set."""
        return Graph(self.n, canonical_edges(edges, self.n), self.features, self.labels)

    def adjacency(self) -> sp.csr_matrix:
        """Binary symmetric adjacency without self-loops."""
        return adjacency_matrix(self.n, self.edges)


def canonical_edges(pairs, n: int) -> np.ndarray:
    """Symmetrize, drop self-loops and duplicates, and sort an edge list."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    keys = np.unique(lo[keep] * n + hi[keep])
    return np.stack([keys // n, keys % n], axis=1)


def adjacency_matrix(n: int, edges) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(len(rows), dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _lines(path):
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def read_edges(path) -> np.ndarray:
    pairs = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected two node ids, got {line!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer node id in {line!r}") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_features(path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in _lines(path):
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GraphFormatError(f"{path}:{lineno}: expected {width} values, got {len(row)}")
        rows.append(row)
    if not rows:
        raise GraphFormatError(f"{path}: no feature rows")
    return np.array(rows, dtype=np.float64)


def read_labels(path) -> np.ndarray:
    labels = []
    for lineno, line in _lines(path):
        try:
            labels.append(int(line))
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer label {line!r}") from None
    return np.array(labels, dtype=np.int64)


def load_graph(edges_path, features_path, labels_path=None) -> Graph:
    """Read a graph from the plain-text edge/feature/label files."""
    features = read_features(features_path)
    n = features.shape[0]
    raw = read_edges(edges_path)
    if len(raw) and (raw.min() < 0 or raw.max() >= n):
        bad = raw[(raw < 0).any(axis=1) | (raw >= n).any(axis=1)][0]
        raise GraphFormatError(
            f"{edges_path}: edge ({bad[0]}, {bad[1]}) references a node outside [0, {n})"
        )
    loops = int(np.sum(raw[:, 0] == raw[:, 1])) if len(raw) else 0
    if loops:
        log.warning("dropping %d self-loop lines from %s", loops, edges_path)
    labels = read_labels(labels_path) if labels_path is not None else None
    if labels is not None and len(labels) != n:
        raise GraphFormatError(f"{labels_path}: {len(labels)} labels for {n} nodes")
    return Graph(n, canonical_edges(raw, n), features, labels)


def write_graph(g: Graph, edges_path, features_path, labels_path=None):
    """Inverse of :func:`load_graph`; handy for conversions and fixtures."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")
    with open(features_path, "w", encoding="utf-8") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if labels_path is not None:
        if g.labels is None:
            raise GraphFormatError("graph has no labels to write")
        Path(labels_path).write_text("".join(f"{int(c)}\n" for c in g.labels), encoding="utf-8")


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric-normalized adjacency ``D^-1/2 A D^-1/2`` (``A + I`` when ``self_loops``)."""

    matrix: sp.csr_matrix
    self_loops: bool

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def normalize_adjacency(g: Graph, self_loops: bool) -> NormalizedAdjacency:
    a = g.adjacency()
    if self_loops:
        a = a + sp.identity(g.n, format="csr", dtype=np.float64)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    mat = sp.csr_matrix(d @ a @ d)
    mat.sort_indices()
    return NormalizedAdjacency(mat, self_loops)


@dataclass(frozen=True)
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int


def _pair_keys(edges, n):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return edges[:, 0] * n + edges[:, 1]


def _keys_to_edges(keys, n):
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack([keys // n, keys % n], axis=1)


def sample_non_edges(g: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of ``count`` distinct non-edges ``(i < j)`` without replacement."""
    n = g.n
    total_pairs = n * (n - 1) // 2
    available = total_pairs - g.num_edges
    if count > available:
        raise ValueError(
            f"requested {count} negative edges but the graph has only {available} non-edges"
        )
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    edge_keys = _pair_keys(g.edges, n)
    if total_pairs <= 2_000_000:
        iu, ju = np.triu_indices(n, k=1)
        keys = iu.astype(np.int64) * n + ju
        keys = keys[~np.isin(keys, edge_keys)]
        chosen = rng.choice(len(keys), size=count, replace=False)
        return _keys_to_edges(keys[chosen], n)
    # rejection sampling: sparse graphs make this close to a single pass
    taken = set(edge_keys.tolist())
    out = []
    while len(out) < count:
        i = rng.integers(0, n, size=2 * (count - len(out)) + 16)
        j = rng.integers(0, n, size=len(i))
        for a, b in zip(i.tolist(), j.tolist()):
            if a == b:
                continue
            key = min(a, b) * n + max(a, b)
            if key in taken:
                continue
            taken.add(key)
            out.append(key)
            if len(out) == count:
                break
    return _keys_to_edges(out, n)


def split_edges(g: Graph, ratios: Sequence[float] = (0.85, 0.05, 0.10), seed: int = 0) -> EdgeSplit:
    """Partition edges into train/val/test and draw matching negative samples.

    Validation and test negatives are disjoint from each other and from every
    edge of ``g``.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    m = g.num_edges
    n_val = int(round(m * ratios[1]))
    n_test = int(round(m * ratios[2]))
    n_train = m - n_val - n_test
    if n_train < 0:
        raise ValueError("ratios leave no room for training edges")
    rng = np.random.default_rng(seed)
    neg = sample_non_edges(g, n_val + n_test, rng)
    order = rng.permutation(m)
    test_idx = np.sort(order[:n_test])
    val_idx = np.sort(order[n_test:n_test + n_val])
    train_idx = np.sort(order[n_test + n_val:])
    return EdgeSplit(
        train_pos=g.edges[train_idx],
        val_pos=g.edges[val_idx],
        test_pos=g.edges[test_idx],
        val_neg=neg[:n_val],
        test_neg=neg[n_val:],
        seed=seed,
    )
