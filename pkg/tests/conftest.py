import numpy as np
import pytest

from gophormer.graph import from_edges


def make_graph(n, edges, feature_dim=4, labels=None, seed=0, split=None):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, feature_dim))
    if labels is None:
        labels = np.arange(n) % 2 if n > 1 else np.zeros(n, dtype=int)
    if split is None:
        split = np.zeros(n, dtype=np.int8)
    return from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2), feats, labels, split=split)


def random_graph(n, p, seed, feature_dim=4):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    keep = rng.random(len(iu[0])) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return make_graph(n, edges, feature_dim=feature_dim, seed=seed)


def dense_tilde(g):
    a = g.dense_adjacency() + np.eye(g.num_nodes)
    return a / a.sum(axis=1, keepdims=True)


@pytest.fixture
def path3():
    return make_graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def path2():
    return make_graph(2, [(0, 1)])


@pytest.fixture
def triangle():
    return make_graph(3, [(0, 1), (1, 2), (0, 2)])
