import numpy as np
import pytest

from dbgan.graph import Graph, canonical_edges
from dbgan.synthetic import citation_graph


@pytest.fixture(scope="session")
def small_graph():
    return citation_graph(n_classes=3, nodes_per_class=30, n_features=40, avg_degree=4.0, seed=11)


def random_graph(n, p, d=4, seed=0, labels=False):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = canonical_edges(np.stack([iu[keep], ju[keep]], axis=1), n)
    feats = rng.random((n, d))
    lab = rng.integers(0, 3, size=n) if labels else None
    return Graph(n, edges, feats, lab)


def random_psd(n, rng, rank=None):
    rank = n if rank is None else rank
    b = rng.normal(size=(n, rank))
    return b @ b.T / rank


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}")
