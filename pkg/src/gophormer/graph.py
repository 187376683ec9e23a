"""Immutable input graph, its self-looped normalized adjacency, and lazy power entries."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2
DEFAULT_MAX_ORDER = 3


class GraphFormatError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class Graph:
    """Undirected graph in symmetrized CSR form with features, labels and a split.

    ``split`` holds one of TRAIN/VAL/TEST per node.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.features, self.labels, self.split):
            arr.setflags(write=False)
        _validate(self)

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degree(self, i: int | None = None):
        deg = np.diff(self.indptr)
        return deg if i is None else int(deg[i])

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def nodes_in(self, split: str | int) -> np.ndarray:
        tag = SPLIT_NAMES.index(split) if isinstance(split, str) else split
        return np.flatnonzero(self.split == tag)

    def split_sizes(self) -> dict[str, int]:
        return {name: int((self.split == k).sum()) for k, name in enumerate(SPLIT_NAMES)}

    def dense_adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        a[rows, self.indices] = 1.0
        return a


def _validate(g: Graph) -> None:
    n = len(g.indptr) - 1
    if g.indptr[0] != 0 or np.any(np.diff(g.indptr) < 0) or g.indptr[-1] != len(g.indices):
        raise GraphFormatError("CSR offsets are not monotone or do not cover the index array")
    if len(g.indices) % 2:
        raise GraphFormatError("symmetrized edge storage must hold an even number of entries")
    if len(g.indices) and (g.indices.min() < 0 or g.indices.max() >= n):
        raise GraphFormatError("neighbor id out of range")
    rows = np.repeat(np.arange(n), np.diff(g.indptr))
    if np.any(rows == g.indices):
        raise GraphFormatError("self-loops must not be stored")
    if g.features.ndim != 2 or g.features.shape[0] != n:
        raise GraphFormatError(f"feature matrix has {g.features.shape[0]} rows for {n} nodes")
    if g.labels.shape != (n,) or g.split.shape != (n,):
        raise GraphFormatError("labels and split must have one entry per node")
    if n and (g.labels.min() < 0 or g.labels.max() >= g.num_classes):
        raise GraphFormatError("label outside [0, num_classes)")


def from_edges(
    num_nodes: int,
    edges: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    split: np.ndarray | None = None,
    num_classes: int | None = None,
    ratios=(0.6, 0.2, 0.2),
    seed: int = 0,
    meta: dict | None = None,
) -> Graph:
    """Build a Graph from an (E, 2) edge array; direction, duplicates and self-loops are dropped."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
        raise GraphFormatError(f"edge endpoint outside [0, {num_nodes})")
    loops = edges[:, 0] == edges[:, 1]
    n_loops = int(loops.sum())
    if n_loops:
        log.warning("dropped %d self-loops", n_loops)
    edges = edges[~loops]
    lo, hi = np.minimum(edges[:, 0], edges[:, 1]), np.maximum(edges[:, 0], edges[:, 1])
    und = np.unique(np.stack([lo, hi], axis=1), axis=0) if len(edges) else np.zeros((0, 2), np.int64)
    both = np.concatenate([und, und[:, ::-1]], axis=0)
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, both[:, 0] + 1, 1)
    indptr = np.cumsum(indptr)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    if split is None:
        split = stratified_split(labels, ratios, seed)
    meta = dict(meta or {})
    meta.setdefault("self_loops_dropped", n_loops)
    meta.setdefault("split_sizes", {k: int((split == i).sum()) for i, k in enumerate(SPLIT_NAMES)})
    return Graph(
        indptr=indptr,
        indices=both[:, 1].astype(np.int64),
        features=np.ascontiguousarray(features, dtype=np.float64),
        labels=labels,
        split=np.asarray(split, dtype=np.int8),
        num_classes=num_classes,
        meta=meta,
    )


def stratified_split(labels: np.ndarray, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> np.ndarray:
    """Per-class seeded shuffle, cut by ``ratios`` (train, val, test).

    Each class contributes round(ratio * size) nodes to train and val, the rest to
    test; rounding residue is absorbed by test.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1: {ratios}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    split = np.full(len(labels), TEST, dtype=np.int8)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        n_train = int(round(ratios[0] * len(members)))
        n_val = int(round(ratios[1] * len(members)))
        if n_train == 0:
            raise GraphFormatError(f"class {c} has no training node; stratification impossible")
        split[members[:n_train]] = TRAIN
        split[members[n_train : n_train + n_val]] = VAL
    return split


# ---------------------------------------------------------------------------
# file loading


def _read_lines(path: Path):
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                yield lineno, line
    except FileNotFoundError:
        raise GraphFormatError(f"{path}: file not found") from None


def read_edges(path: Path) -> np.ndarray:
    pairs = []
    for lineno, line in _read_lines(path):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) != 2:
            raise GraphFormatError(f"{path}:{lineno}: expected 'src dst', got {line.strip()!r}")
        try:
            pairs.append((int(body[0]), int(body[1])))
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer node id") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_features(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        try:
            row = np.array(line.split(), dtype=np.float64)
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GraphFormatError(f"{path}:{lineno}: expected {width} values, got {len(row)}")
        rows.append(row)
    if not rows:
        raise GraphFormatError(f"{path}: no feature rows")
    return np.vstack(rows)


def read_labels(path: Path) -> np.ndarray:
    out = []
    for lineno, line in _read_lines(path):
        s = line.strip()
        if not s:
            continue
        try:
            out.append(int(s))
        except ValueError:
            raise GraphFormatError(f"{path}:{lineno}: non-integer label {s!r}") from None
    return np.array(out, dtype=np.int64)


def read_split(path: Path) -> np.ndarray:
    out = []
    for lineno, line in _read_lines(path):
        s = line.strip()
        if not s:
            continue
        if s not in SPLIT_NAMES:
            raise GraphFormatError(f"{path}:{lineno}: split tag must be one of {SPLIT_NAMES}")
        out.append(SPLIT_NAMES.index(s))
    return np.array(out, dtype=np.int8)


def load_graph(
    edge_file,
    feature_file,
    label_file,
    ratios=(0.6, 0.2, 0.2),
    seed: int = 0,
    split_file=None,
) -> Graph:
    edge_file, feature_file, label_file = Path(edge_file), Path(feature_file), Path(label_file)
    features = read_features(feature_file)
    labels = read_labels(label_file)
    edges = read_edges(edge_file)
    n = features.shape[0]
    if len(labels) != n:
        raise GraphFormatError(f"{label_file}: {len(labels)} labels for {n} feature rows")
    if len(edges) and edges.max() >= n:
        bad = int(np.argmax(edges.max(axis=1) >= n))
        raise GraphFormatError(f"{edge_file}: edge {bad} references node {edges[bad].max()} >= {n}")
    if len(edges) and edges.min() < 0:
        raise GraphFormatError(f"{edge_file}: negative node id")
    split = None
    if split_file is not None:
        split = read_split(Path(split_file))
        if len(split) != n:
            raise GraphFormatError(f"{split_file}: {len(split)} tags for {n} nodes")
    num_classes = int(labels.max()) + 1
    if split is None:
        split = stratified_split(labels, ratios, seed)
    missing = set(range(num_classes)) - set(labels[split == TRAIN].tolist())
    if missing:
        raise GraphFormatError(f"classes {sorted(missing)} absent from the train split")
    meta = {"source": str(edge_file.parent), "ratios": tuple(ratios), "split_seed": seed}
    return from_edges(n, edges, features, labels, split=split, num_classes=num_classes, meta=meta)


# ---------------------------------------------------------------------------
# normalized adjacency


@dataclass(frozen=True)
class SparseRowMatrix:
    """CSR matrix over graph nodes (values of Norm(A + I))."""

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    kind: str = "row"

    @property
    def num_rows(self) -> int:
        return len(self.indptr) - 1

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.indptr[i], self.indptr[i + 1]
        return self.indices[s:e], self.values[s:e]

    def to_dense(self) -> np.ndarray:
        n = self.num_rows
        out = np.zeros((n, n))
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        out[rows, self.indices] = self.values
        return out


def normalized_adjacency(g: Graph, kind: str = "row") -> SparseRowMatrix:
    """Norm(A + I): ``kind="row"`` gives D^-1 (A+I), ``"sym"`` gives D^-1/2 (A+I) D^-1/2."""
    n = g.num_nodes
    deg1 = np.diff(g.indptr) + 1
    indptr = g.indptr + np.arange(n + 1)
    indices = np.empty(len(g.indices) + n, dtype=np.int64)
    for i in range(n):
        nb = g.neighbors(i)
        pos = np.searchsorted(nb, i)
        indices[indptr[i] : indptr[i + 1]] = np.concatenate([nb[:pos], [i], nb[pos:]])
    rows = np.repeat(np.arange(n), deg1)
    if kind == "row":
        values = 1.0 / deg1[rows]
    elif kind == "sym":
        values = 1.0 / np.sqrt(deg1[rows] * deg1[indices])
    else:
        raise ValueError(f"unknown normalization {kind!r}")
    return SparseRowMatrix(indptr=indptr, indices=indices, values=values, kind=kind)


class AdjacencyPowers:
    """Lazily expanded rows of Ã^m with a per-(row, m) memo.

    Row ``i`` of Ã^m is computed from row ``i`` of Ã^(m-1) by one sparse
    expansion step. The memo is guarded by a lock so one instance can be shared
    between threads.
    """

    def __init__(self, adj: SparseRowMatrix, max_order: int = DEFAULT_MAX_ORDER):
        self.adj = adj
        self.max_order = max_order
        self._memo: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def _check(self, m: int) -> None:
        if m < 0 or m > self.max_order:
            raise ValueError(f"adjacency power order {m} outside [0, {self.max_order}]")

    def row(self, i: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Sorted (columns, values) of row ``i`` of Ã^m."""
        self._check(m)
        if m == 0:
            return np.array([i], dtype=np.int64), np.array([1.0])
        if m == 1:
            return self.adj.row(i)
        key = (i, m)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        cols, vals = self.row(i, m - 1)
        a = self.adj
        starts, ends = a.indptr[cols], a.indptr[cols + 1]
        lengths = ends - starts
        flat = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)])
        weights = np.repeat(vals, lengths) * a.values[flat]
        out_cols, inverse = np.unique(a.indices[flat], return_inverse=True)
        out_vals = np.zeros(len(out_cols))
        np.add.at(out_vals, inverse, weights)
        res = (out_cols, out_vals)
        with self._lock:
            self._memo.setdefault(key, res)
        return res

    def entry(self, m: int, i: int, j: int) -> float:
        cols, vals = self.row(i, m)
        k = np.searchsorted(cols, j)
        return float(vals[k]) if k < len(cols) and cols[k] == j else 0.0

    def block(self, nodes: np.ndarray, m: int) -> np.ndarray:
        """Dense ``[k, k]`` block ``Ã^m[nodes][:, nodes]``."""
        self._check(m)
        nodes = np.asarray(nodes, dtype=np.int64)
        k = len(nodes)
        if m == 0:
            return np.eye(k)
        rows = [self.row(int(i), m) for i in nodes]
        cols = np.concatenate([r[0] for r in rows])
        vals = np.concatenate([r[1] for r in rows])
        owner = np.repeat(np.arange(k), [len(r[0]) for r in rows])
        pos = np.full(self.adj.num_rows, -1, dtype=np.int64)
        pos[nodes] = np.arange(k)
        at = pos[cols]
        keep = at >= 0
        out = np.zeros((k, k))
        out[owner[keep], at[keep]] = vals[keep]
        return out


def adj_power_entry(powers: AdjacencyPowers, m: int, i: int, j: int) -> float:
    return powers.entry(m, i, j)
