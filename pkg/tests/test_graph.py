import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dbgan.graph import (
    Graph,
    GraphFormatError,
    canonical_edges,
    load_graph,
    normalize_adjacency,
    split_edges,
    write_graph,
)

from conftest import random_graph


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_bytes(text.encode("utf-8"))
    return p


def test_load_simple(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n1 2\n")
    f = _write(tmp_path, "f.txt", "1,0\n0,1\n1,1\n")
    g = load_graph(e, f)
    assert g.n == 3 and g.num_edges == 2 and g.num_features == 2
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    assert g.labels is None


def test_load_symmetrizes_duplicates(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n1 0\n0 1\n")
    f = _write(tmp_path, "f.txt", "1,0\n0,1\n")
    g = load_graph(e, f)
    assert g.edges.tolist() == [[0, 1]]


def test_load_comments_crlf_labels(tmp_path):
    e = _write(tmp_path, "e.txt", "# header\r\n0 2\r\n\r\n2 1\r\n")
    f = _write(tmp_path, "f.txt", "0.5,1\r\n0,0\r\n1,0.25\r\n")
    lab = _write(tmp_path, "l.txt", "0\n1\n1\n")
    g = load_graph(e, f, lab)
    assert g.edges.tolist() == [[0, 2], [1, 2]]
    assert g.labels.tolist() == [0, 1, 1]
    assert g.num_classes == 2


def test_self_loops_dropped(tmp_path):
    e = _write(tmp_path, "e.txt", "0 0\n0 1\n")
    f = _write(tmp_path, "f.txt", "1\n2\n")
    assert load_graph(e, f).edges.tolist() == [[0, 1]]


@pytest.mark.parametrize(
    "edges,features,line",
    [
        ("0 1\n1 x\n", "1\n2\n", ":2:"),
        ("0 1 2\n", "1\n2\n", ":1:"),
        ("0 1\n", "1,2\n3\n", ":2:"),
        ("0 1\n", "1\nabc\n", ":2:"),
    ],
)
def test_malformed_lines_report_line_number(tmp_path, edges, features, line):
    e = _write(tmp_path, "e.txt", edges)
    f = _write(tmp_path, "f.txt", features)
    with pytest.raises(GraphFormatError, match=line):
        load_graph(e, f)


def test_index_out_of_range(tmp_path):
    e = _write(tmp_path, "e.txt", "0 5\n")
    f = _write(tmp_path, "f.txt", "1\n2\n")
    with pytest.raises(GraphFormatError, match="outside"):
        load_graph(e, f)


def test_label_count_mismatch(tmp_path):
    e = _write(tmp_path, "e.txt", "0 1\n")
    f = _write(tmp_path, "f.txt", "1\n2\n")
    lab = _write(tmp_path, "l.txt", "0\n")
    with pytest.raises(GraphFormatError):
        load_graph(e, f, lab)


def test_graph_rejects_nonfinite_features():
    with pytest.raises(ValueError):
        Graph(2, np.array([[0, 1]]), np.array([[np.nan], [1.0]]))


def test_write_read_roundtrip(tmp_path):
    g = random_graph(15, 0.3, d=3, seed=4, labels=True)
    paths = [tmp_path / n for n in ("e", "f", "l")]
    write_graph(g, *paths)
    h = load_graph(*paths)
    assert np.array_equal(h.edges, g.edges)
    assert np.array_equal(h.features, g.features)
    assert np.array_equal(h.labels, g.labels)


def test_normalize_single_edge():
    g = Graph(2, np.array([[0, 1]]), np.eye(2))
    assert np.allclose(normalize_adjacency(g, False).dense(), [[0, 1], [1, 0]])
    assert np.allclose(normalize_adjacency(g, True).dense(), [[0.5, 0.5], [0.5, 0.5]])


def test_normalize_isolated_node():
    g = Graph(1, np.zeros((0, 2), dtype=np.int64), np.ones((1, 1)))
    assert normalize_adjacency(g, False).dense().tolist() == [[0.0]]
    assert normalize_adjacency(g, True).dense().tolist() == [[1.0]]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 50), p=st.floats(0, 1), seed=st.integers(0, 2**16), loops=st.booleans())
def test_normalized_adjacency_spectrum(n, p, seed, loops):
    g = random_graph(n, p, seed=seed)
    a = normalize_adjacency(g, loops).dense()
    assert np.array_equal(a, a.T)
    assert (a >= 0).all()
    assert np.abs(np.linalg.eigvalsh(a)).max() <= 1 + 1e-10


def test_split_counts_and_determinism():
    g = random_graph(40, 0.0, seed=0)
    rng = np.random.default_rng(3)
    pairs = set()
    while len(pairs) < 100:
        i, j = sorted(rng.choice(40, 2, replace=False).tolist())
        pairs.add((i, j))
    g = g.with_edges(canonical_edges(sorted(pairs), 40))
    a = split_edges(g, (0.85, 0.05, 0.10), seed=7)
    b = split_edges(g, (0.85, 0.05, 0.10), seed=7)
    assert (len(a.train_pos), len(a.val_pos), len(a.test_pos)) == (85, 5, 10)
    assert (len(a.val_neg), len(a.test_neg)) == (5, 10)
    for f in ("train_pos", "val_pos", "test_pos", "val_neg", "test_neg"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_split_complete_graph_has_no_negatives():
    iu, ju = np.triu_indices(5, k=1)
    k5 = Graph(5, np.stack([iu, ju], 1), np.eye(5))
    # brute-force: every pair i<j is an edge, so no non-edges exist
    assert sum(1 for i in range(5) for j in range(i + 1, 5) if [i, j] not in k5.edges.tolist()) == 0
    with pytest.raises(ValueError, match="non-edges"):
        split_edges(k5, (0.0, 0.0, 1.0), seed=0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(12, 60), p=st.floats(0.1, 0.6), seed=st.integers(0, 1000))
def test_split_is_partition(n, p, seed):
    g = random_graph(n, p, seed=seed)
    if g.num_edges < 20 or g.num_edges > n * (n - 1) // 2 - g.num_edges // 5:
        return
    s = split_edges(g, seed=seed)
    joined = np.concatenate([s.train_pos, s.val_pos, s.test_pos])
    assert np.array_equal(canonical_edges(joined, n), g.edges)
    assert len(joined) == g.num_edges
    m = g.num_edges
    assert abs(len(s.val_pos) - 0.05 * m) <= 1 and abs(len(s.test_pos) - 0.10 * m) <= 1
    edge_set = set(map(tuple, g.edges.tolist()))
    negs = np.concatenate([s.val_neg, s.test_neg])
    assert len(set(map(tuple, negs.tolist()))) == len(negs)
    for i, j in negs.tolist():
        assert i != j and (min(i, j), max(i, j)) not in edge_set
    assert len(s.val_neg) == len(s.val_pos) and len(s.test_neg) == len(s.test_pos)


def test_rejection_sampler_path():
    # over 2e6 candidate pairs forces the rejection-sampling branch
    n = 2100
    rng = np.random.default_rng(0)
    edges = canonical_edges(rng.integers(0, n, size=(3000, 2)), n)
    g = Graph(n, edges, np.zeros((n, 1)))
    s = split_edges(g, seed=1)
    edge_set = set(map(tuple, g.edges.tolist()))
    negs = np.concatenate([s.val_neg, s.test_neg]).tolist()
    assert len(set(map(tuple, negs))) == len(negs)
    assert all(i < j and (i, j) not in edge_set for i, j in negs)
