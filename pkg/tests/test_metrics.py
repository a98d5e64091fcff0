import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn import metrics as skm

from dbgan.graph import normalize_adjacency, split_edges
from dbgan.metrics import (
    cluster,
    clustering_metrics,
    compute_auc_ap,
    contingency,
    edge_score,
    edge_scores,
    evaluate,
    kmeans,
    link_prediction,
    summarize,
)
from dbgan.nn import init_model


def brute_auc(pos, neg):
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def brute_ap(pos, neg):
    # one precision/recall point per distinct threshold, step interpolation
    scores = np.concatenate([pos, neg])
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        sel = scores >= t
        tp = labels[sel].sum()
        recall = tp / len(pos)
        ap += (recall - prev_recall) * tp / sel.sum()
        prev_recall = recall
    return ap


def test_edge_score():
    h = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    assert edge_score(h, 0, 1) == 0.5
    assert edge_score(np.array([[2.0], [2.0]]), 0, 1) == pytest.approx(0.98201379, abs=1e-8)
    assert edge_score(h, 0, 2) == edge_score(h, 2, 0)
    with pytest.raises(IndexError):
        edge_score(h, 0, 3)
    assert np.allclose(edge_scores(h, [[0, 2], [1, 2]]), [1 / (1 + np.exp(-2)), 0.5])


def test_auc_ap_examples():
    assert compute_auc_ap([1, 1, 1], [0, 0]) == (1.0, 1.0)
    assert compute_auc_ap([0.3] * 4, [0.3] * 5)[0] == 0.5
    auc, ap = compute_auc_ap([0.9, 0.4], [0.6, 0.1])
    assert auc == 0.75
    assert ap == pytest.approx((1 / 1 + 2 / 3) / 2, rel=1e-15)
    with pytest.raises(ValueError):
        compute_auc_ap([], [0.1])
    with pytest.raises(ValueError):
        compute_auc_ap([0.1], [])


scores = st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.7, 0.9, 1.0]) | st.floats(0, 1), min_size=1, max_size=100)


@settings(max_examples=150, deadline=None)
@given(pos=scores, neg=scores)
def test_auc_ap_oracles(pos, neg):
    auc, ap = compute_auc_ap(pos, neg)
    assert auc == pytest.approx(brute_auc(pos, neg), abs=1e-12)
    assert ap == pytest.approx(brute_ap(np.array(pos), np.array(neg)), abs=1e-12)
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    assert ap == pytest.approx(skm.average_precision_score(labels, np.r_[pos, neg]), abs=1e-12)
    assert 0 <= auc <= 1 and 0 <= ap <= 1


@settings(max_examples=60, deadline=None)
@given(pos=st.lists(st.integers(-40, 40), min_size=1, max_size=50), neg=st.lists(st.integers(-40, 40), min_size=1, max_size=50))
def test_auc_monotone_invariance(pos, neg):
    # grid values stay distinct under the transform, so ties are preserved exactly
    pos, neg = np.array(pos) / 8.0, np.array(neg) / 8.0
    f = lambda v: np.exp(np.asarray(v) / 3.0) * 2 + 1  # noqa: E731
    assert compute_auc_ap(pos, neg)[0] == compute_auc_ap(f(pos), f(neg))[0]


def test_link_prediction_zero_embedding():
    h = np.zeros((5, 3))
    res = link_prediction(h, [[0, 1], [2, 3]], [[0, 4], [1, 3]])
    assert res.auc == 0.5


# ---------------------------------------------------------------- k-means


def test_kmeans_two_blobs():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 2)) * 0.1
    b = rng.normal(size=(20, 2)) * 0.1 + np.array([10.0, 0.0])
    assign = kmeans(np.vstack([a, b]), 2, seed=3)
    assert len(set(assign[:20])) == 1 and len(set(assign[20:])) == 1 and assign[0] != assign[20]


def test_kmeans_k_equals_n():
    x = np.random.default_rng(1).normal(size=(7, 3))
    assign, hist = kmeans(x, 7, seed=0, return_history=True)
    assert sorted(assign.tolist()) == list(range(7))
    assert hist[-1] < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 6))
def test_kmeans_objective_nonincreasing(seed, k):
    x = np.random.default_rng(seed).normal(size=(40, 3))
    _, hist = kmeans(x, k, seed=seed, return_history=True)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_determinism_and_errors():
    x = np.random.default_rng(2).normal(size=(30, 2))
    assert np.array_equal(kmeans(x, 3, seed=5), kmeans(x, 3, seed=5))
    with pytest.raises(ValueError):
        kmeans(x, 31)
    with pytest.raises(ValueError):
        kmeans(x, 2, max_iter=0)


def test_kmeans_duplicate_points_fill_all_clusters():
    x = np.array([[0.0], [0.0], [0.0], [5.0]])
    assign = kmeans(x, 3, seed=0)
    assert len(assign) == 4


# ---------------------------------------------------------------- clustering metrics


def test_clustering_identical_and_permuted():
    labels = np.array([0, 0, 1, 2, 2, 1, 0])
    assert clustering_metrics(labels, labels) == (1.0, 1.0, 1.0)
    perm = np.array([2, 0, 1])
    assert clustering_metrics(perm[labels], labels) == pytest.approx((1.0, 1.0, 1.0))


def test_clustering_hand_example():
    acc, nmi, ari = clustering_metrics([0, 1, 0, 1], [0, 0, 1, 1])
    assert acc == 0.5 and nmi == pytest.approx(0.0, abs=1e-15) and ari == pytest.approx(-0.5)


def test_length_mismatch():
    with pytest.raises(ValueError):
        clustering_metrics([0, 1], [0, 1, 1])


def brute_acc(a, b):
    ka, kb = int(a.max()) + 1, int(b.max()) + 1
    best = 0
    table = contingency(a, b)
    big, small = (ka, kb) if ka >= kb else (kb, ka)
    for perm in itertools.permutations(range(big), small):
        if ka >= kb:
            s = sum(table[perm[j], j] for j in range(kb))
        else:
            s = sum(table[j, perm[j]] for j in range(ka))
        best = max(best, s)
    return best / len(a)


def direct_nmi(a, b):
    n = len(a)
    mi = 0.0
    for i in set(a):
        for j in set(b):
            nij = np.sum((a == i) & (b == j))
            if nij:
                mi += nij / n * np.log(n * nij / (np.sum(a == i) * np.sum(b == j)))
    ent = lambda x: -sum((c / n) * np.log(c / n) for c in np.bincount(x) if c)  # noqa: E731
    return mi / ((ent(a) + ent(b)) / 2) if ent(a) + ent(b) > 0 else 1.0


def direct_ari(a, b):
    from math import comb

    n = len(a)
    t = contingency(a, b)
    sij = sum(comb(int(v), 2) for v in t.ravel())
    sa = sum(comb(int(v), 2) for v in t.sum(1))
    sb = sum(comb(int(v), 2) for v in t.sum(0))
    exp = sa * sb / comb(n, 2)
    mx = (sa + sb) / 2
    return 1.0 if mx == exp else (sij - exp) / (mx - exp)


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**20), n=st.integers(2, 200), ka=st.integers(1, 5), kb=st.integers(1, 5))
def test_clustering_oracles(seed, n, ka, kb):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, ka, size=n)
    b = rng.integers(0, kb, size=n)
    acc, nmi, ari = clustering_metrics(a, b)
    assert acc == pytest.approx(brute_acc(a, b), abs=1e-12)
    assert nmi == pytest.approx(min(1.0, max(0.0, direct_nmi(a, b))), abs=1e-10)
    assert ari == pytest.approx(direct_ari(a, b), abs=1e-10)
    if len(set(a)) > 1 or len(set(b)) > 1:
        assert nmi == pytest.approx(skm.normalized_mutual_info_score(b, a), abs=1e-10)
    assert ari == pytest.approx(skm.adjusted_rand_score(b, a), abs=1e-10)
    # symmetry of NMI, ranges
    assert clustering_metrics(b, a)[1] == pytest.approx(nmi, abs=1e-12)
    assert 0 <= acc <= 1 and 0 <= nmi <= 1 and -1 <= ari <= 1


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**20), n=st.integers(2, 200), k=st.integers(2, 6))
def test_hungarian_beats_greedy(seed, n, k):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, k, size=n)
    b = np.where(rng.random(n) < 0.6, a, rng.integers(0, k, size=n))
    table = contingency(a, b)
    greedy = sum(table[i].max() for i in range(table.shape[0]))  # majority map, may reuse labels
    used, one_to_one = set(), 0
    for i in np.argsort(-table.max(1)):
        order = [j for j in np.argsort(-table[i]) if j not in used]
        if order:
            used.add(order[0])
            one_to_one += table[i, order[0]]
    matched = round(clustering_metrics(a, b)[0] * n)
    assert matched >= one_to_one
    assert matched <= greedy


def test_ari_of_random_assignments_centered():
    rng = np.random.default_rng(0)
    vals = [clustering_metrics(rng.integers(0, 5, 500), rng.integers(0, 5, 500))[2] for _ in range(1000)]
    assert abs(np.mean(vals)) < 0.02


# ---------------------------------------------------------------- evaluate


def test_evaluate_zero_encoder(small_graph):
    p = init_model(small_graph.num_features, 4, seed=0)
    for layer in p.encoder:
        layer.weight.data[:] = 0.0
    split = split_edges(small_graph, seed=0)
    lp, cl = evaluate(p, small_graph, split, seed=0)
    assert lp.auc == 0.5
    assert 0 <= cl.acc <= 1
    assert len(cl.assignments) == small_graph.n


def test_evaluate_needs_labels(small_graph):
    from dbgan.graph import Graph

    g = Graph(small_graph.n, small_graph.edges, small_graph.features)
    p = init_model(g.num_features, 4, seed=0)
    with pytest.raises(ValueError):
        evaluate(p, g, split_edges(g, seed=0))
    lp, cl = evaluate(p, g, split_edges(g, seed=0), cluster_task=False)
    assert cl is None


def test_cluster_uses_class_count(small_graph):
    h = np.random.default_rng(0).normal(size=(small_graph.n, 3))
    res = cluster(h, small_graph.labels, seed=0)
    assert set(res.assignments.tolist()) <= set(range(small_graph.num_classes))


def test_summarize():
    mean, std, se = summarize([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5 and std == pytest.approx(np.std([1, 2, 3, 4])) and se == pytest.approx(std / 2)
