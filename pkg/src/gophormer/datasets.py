"""Synthetic graphs and the plain-text dataset directory layout."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import SPLIT_NAMES, Graph, from_edges, load_graph

EDGE_FILE = "edges.txt"
FEATURE_FILE = "features.txt"
LABEL_FILE = "labels.txt"
SPLIT_FILE = "split.txt"


def sbm(
    num_nodes: int = 200,
    blocks: int = 2,
    p_in: float | tuple[float, ...] = 0.1,
    p_out: float = 0.01,
    feature_dim: int = 16,
    signal: float = 0.3,
    noise: float = 1.0,
    seed: int = 0,
    split_seed: int | None = None,
    ratios=(0.6, 0.2, 0.2),
) -> Graph:
    """Stochastic block model; label = block, features = ±signal block pattern + gaussian noise.

    With a weak ``signal`` a node's own features are unreliable and the label
    must be read off its neighborhood. ``p_in`` may give one density per block,
    which makes the label recoverable from local structure alone.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % blocks
    rng.shuffle(labels)
    same = labels[:, None] == labels[None, :]
    dens = np.broadcast_to(np.asarray(p_in, dtype=np.float64), (blocks,))
    prob = np.where(same, dens[labels][:, None], p_out)
    draws = rng.random((num_nodes, num_nodes)) < prob
    iu = np.triu_indices(num_nodes, k=1)
    keep = draws[iu]
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    patterns = rng.choice([-1.0, 1.0], size=(blocks, feature_dim))
    features = signal * patterns[labels] + noise * rng.normal(size=(num_nodes, feature_dim))
    return from_edges(
        num_nodes,
        edges,
        features,
        labels,
        num_classes=blocks,
        ratios=ratios,
        seed=seed if split_seed is None else split_seed,
        meta={"source": f"sbm(n={num_nodes}, p_in={p_in}, p_out={p_out}, seed={seed})"},
    )


def random_regular(num_nodes: int, degree: int = 10, feature_dim: int = 16, classes: int = 2, seed: int = 0) -> Graph:
    """Random d-regular graph with random features and labels (for scaling runs)."""
    import networkx as nx

    nxg = nx.random_regular_graph(degree, num_nodes, seed=seed)
    edges = np.array(nxg.edges(), dtype=np.int64).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, classes, size=num_nodes)
    labels[:classes] = np.arange(classes)
    features = rng.normal(size=(num_nodes, feature_dim))
    return from_edges(num_nodes, edges, features, labels, num_classes=classes, seed=seed)


def two_cluster_toy(nodes_per_cluster: int = 10, seed: int = 0) -> Graph:
    """Two dense clusters joined by one bridge edge; features weakly tied to the cluster."""
    rng = np.random.default_rng(seed)
    n = 2 * nodes_per_cluster
    edges = []
    for c in range(2):
        base = c * nodes_per_cluster
        for i in range(nodes_per_cluster):
            for j in range(i + 1, nodes_per_cluster):
                if rng.random() < 0.5 or j == i + 1:
                    edges.append((base + i, base + j))
    edges.append((nodes_per_cluster - 1, nodes_per_cluster))
    labels = np.repeat([0, 1], nodes_per_cluster)
    features = np.eye(2)[labels] * 0.5 + rng.normal(scale=0.5, size=(n, 2))
    features = np.concatenate([features, rng.normal(size=(n, 6))], axis=1)
    split = np.full(n, 0, dtype=np.int8)
    return from_edges(n, np.array(edges), features, labels, split=split, num_classes=2)


def write_dataset(directory, graph: Graph, with_split: bool = False) -> Path:
    """Write ``graph`` in the edge/feature/label text layout read by :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = np.repeat(np.arange(graph.num_nodes), np.diff(graph.indptr))
    upper = rows < graph.indices
    with open(directory / EDGE_FILE, "w") as fh:
        for a, b in zip(rows[upper].tolist(), graph.indices[upper].tolist()):
            fh.write(f"{a} {b}\n")
    with open(directory / FEATURE_FILE, "w") as fh:
        for row in graph.features:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    with open(directory / LABEL_FILE, "w") as fh:
        fh.writelines(f"{int(y)}\n" for y in graph.labels)
    if with_split:
        with open(directory / SPLIT_FILE, "w") as fh:
            fh.writelines(f"{SPLIT_NAMES[int(s)]}\n" for s in graph.split)
    return directory


def load_dataset(directory, ratios=(0.6, 0.2, 0.2), seed: int = 0, use_split_file: bool = True) -> Graph:
    directory = Path(directory)
    split_file = directory / SPLIT_FILE
    return load_graph(
        directory / EDGE_FILE,
        directory / FEATURE_FILE,
        directory / LABEL_FILE,
        ratios=ratios,
        seed=seed,
        split_file=split_file if use_split_file and split_file.exists() else None,
    )
