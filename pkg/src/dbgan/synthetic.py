"""Synthetic citation-style graphs: stochastic block model + topical bag-of-words."""

from __future__ import annotations

import numpy as np

from .graph import Graph, canonical_edges


def citation_graph(
    n_classes: int = 4,
    nodes_per_class: int = 50,
    n_features: int = 100,
    avg_degree: float = 4.0,
    homophily: float = 0.85,
    words_per_node: int = 12,
    topic_strength: float = 0.7,
    seed=0,
) -> Graph:
    """Labelled graph whose edges and binary features both depend on the class.

    ``homophily`` is the expected fraction of edges joining same-class nodes;
    ``topic_strength`` the probability that a word comes from the node's
    class vocabulary rather than the shared one.
    """
    rng = np.random.default_rng(seed)
    n = n_classes * nodes_per_class
    labels = np.repeat(np.arange(n_classes), nodes_per_class)
    rng.shuffle(labels)

    n_edges = int(round(avg_degree * n / 2))
    n_intra = int(round(homophily * n_edges))
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    pairs = []
    while len(canonical_edges(pairs, n)) < n_edges:
        c = rng.integers(n_classes, size=n_intra)
        intra = [(rng.choice(members[k]), rng.choice(members[k])) for k in c]
        inter = rng.integers(0, n, size=(n_edges - n_intra, 2)).tolist()
        pairs.extend(intra)
        pairs.extend(inter)
    edges = canonical_edges(pairs, n)
    if len(edges) > n_edges:
        edges = canonical_edges(edges[rng.permutation(len(edges))[:n_edges]], n)

    vocab = np.arange(n_features)
    block = max(1, n_features // (n_classes + 1))
    class_vocab = [vocab[k * block:(k + 1) * block] for k in range(n_classes)]
    shared = vocab[n_classes * block:] if n_features > n_classes * block else vocab
    feats = np.zeros((n, n_features))
    for i in range(n):
        topical = rng.random(words_per_node) < topic_strength
        words = np.where(
            topical,
            rng.choice(class_vocab[labels[i]], words_per_node),
            rng.choice(shared, words_per_node),
        )
        feats[i, words] = 1.0
    return Graph(n, edges, feats, labels)
