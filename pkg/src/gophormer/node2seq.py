"""Node2Seq: turn center nodes into padded token batches.

Each center gets a layer-wise uniformly sampled ego-graph (GraphSAGE style),
``num_global`` shared global slots are appended after the real tokens, and
every token pair carries an M-dimensional proximity vector: Ã^m entries of
the full graph for m < M-1 and a global-slot indicator in the last dim.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .graph import AdjacencyPowers, Graph, normalized_adjacency

PAD = -1
GLOBAL = -2

# disjoint seed streams
TRAIN_STREAM = 0
INFERENCE_STREAM = 1
PLAN_STREAM = 2


@dataclass
class SamplerConfig:
    depth: int = 2
    fanouts: tuple[int, ...] = (8, 4)
    samples_per_node: int = 2
    num_global: int = 1
    proximity_views: int = 3
    master_seed: int = 0
    adjacency_norm: str = "row"
    max_order: int = 3

    def __post_init__(self):
        self.fanouts = tuple(int(f) for f in self.fanouts)
        self.validate()

    def validate(self) -> None:
        if len(self.fanouts) != self.depth:
            raise ValueError(f"need one fanout per layer: depth={self.depth}, fanouts={self.fanouts}")
        if any(f < 1 for f in self.fanouts):
            raise ValueError("fanouts must be positive")
        if self.samples_per_node < 1:
            raise ValueError("samples_per_node must be >= 1")
        if self.num_global < 0:
            raise ValueError("num_global must be >= 0")
        if self.proximity_views < 2:
            raise ValueError("proximity_views must be >= 2 (identity view + global indicator)")
        if self.proximity_views - 2 > self.max_order:
            raise ValueError(
                f"proximity_views={self.proximity_views} needs Ã^{self.proximity_views - 2}, "
                f"beyond max_order={self.max_order}"
            )

    @property
    def max_members(self) -> int:
        total, width = 1, 1
        for f in self.fanouts:
            width *= f
            total += width
        return total

    @property
    def max_tokens(self) -> int:
        return self.max_members + self.num_global


@dataclass
class EgoGraph:
    center: int
    members: np.ndarray
    hops: np.ndarray
    sample_key: tuple = ()

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class EgoBatch:
    """Padded token batch. Real tokens first (center at 0), then global slots, then PAD."""

    token_ids: np.ndarray  # [B, n] node id, GLOBAL or PAD
    global_slot: np.ndarray  # [B, n] global index k or -1
    attn_mask: np.ndarray  # [B, n, n] True = may attend
    proximity: np.ndarray  # [B, n, n, M]
    labels: np.ndarray  # [B], -1 when unknown
    group_key: np.ndarray  # [B] center node id
    num_real: np.ndarray  # [B]
    center_row: int = 0
    egos: list = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]

    @property
    def pad(self) -> np.ndarray:
        return self.token_ids == PAD


class ProximityIndex:
    """Graph plus memoized adjacency powers, shared by every sampler call."""

    def __init__(self, graph: Graph, cfg: SamplerConfig):
        self.graph = graph
        self.adj = normalized_adjacency(graph, cfg.adjacency_norm)
        self.powers = AdjacencyPowers(self.adj, cfg.max_order)


def _rng(cfg: SamplerConfig, stream: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([cfg.master_seed, stream, *[int(k) for k in key]])


def sample_ego_graph(
    g: Graph, center: int, cfg: SamplerConfig, sample_key: tuple = (0, 0), stream: int = TRAIN_STREAM
) -> EgoGraph:
    """Layer-wise uniform neighbor sampling without replacement, deduplicated across layers.

    ``sample_key`` is ``(epoch, sample_index)``; the draw is a pure function of
    ``(cfg.master_seed, stream, center, *sample_key)``.
    """
    rng = _rng(cfg, stream, center, *sample_key)
    indptr, indices = g.indptr, g.indices
    hop = {center: 0}
    members = [center]
    frontier = [center]
    for layer, fanout in enumerate(cfg.fanouts, start=1):
        nxt = []
        for u in frontier:
            s, e = indptr[u], indptr[u + 1]
            deg = e - s
            if deg == 0:
                continue
            if deg <= fanout:
                drawn = indices[s:e]
            else:
                drawn = indices[s + rng.choice(deg, fanout, replace=False)]
            for v in drawn.tolist():
                if v not in hop:
                    hop[v] = layer
                    members.append(v)
                    nxt.append(v)
        frontier = nxt
        if not frontier:
            break
    return EgoGraph(
        center=int(center),
        members=np.array(members, dtype=np.int64),
        hops=np.array([hop[v] for v in members], dtype=np.int64),
        sample_key=(int(center), *sample_key),
    )


def full_ego_graph(g: Graph, center: int, depth: int) -> EgoGraph:
    """Every node within ``depth`` hops, found by BFS (no randomness)."""
    hop = {center: 0}
    members = [center]
    frontier = [center]
    for layer in range(1, depth + 1):
        nxt = []
        for u in frontier:
            for v in g.neighbors(u).tolist():
                if v not in hop:
                    hop[v] = layer
                    members.append(v)
                    nxt.append(v)
        frontier = nxt
    return EgoGraph(
        center=int(center),
        members=np.array(members, dtype=np.int64),
        hops=np.array([hop[v] for v in members], dtype=np.int64),
        sample_key=("full", int(center)),
    )


def proximity_encoding(index: ProximityIndex, ego: EgoGraph, n_g: int, M: int) -> np.ndarray:
    """``[k + n_g, k + n_g, M]`` proximity tensor for one ego-graph (no padding)."""
    if M < 2:
        raise ValueError("M must be >= 2")
    if M - 2 > index.powers.max_order:
        raise ValueError(f"M={M} needs Ã^{M - 2}, beyond max_order={index.powers.max_order}")
    k = len(ego.members)
    n = k + n_g
    phi = np.zeros((n, n, M))
    for m in range(M - 1):
        phi[:k, :k, m] = index.powers.block(ego.members, m)
    if n_g:
        phi[k:, :, M - 1] = 1.0
        phi[:, k:, M - 1] = 1.0
    return phi


def build_batch(
    egos: Sequence[EgoGraph], index: ProximityIndex, cfg: SamplerConfig, labels: np.ndarray | None = None
) -> EgoBatch:
    if not egos:
        raise ValueError("build_batch needs at least one ego-graph")
    n_g, M = cfg.num_global, cfg.proximity_views
    B = len(egos)
    n_max = max(len(e) for e in egos) + n_g
    token_ids = np.full((B, n_max), PAD, dtype=np.int64)
    global_slot = np.full((B, n_max), -1, dtype=np.int64)
    mask = np.zeros((B, n_max, n_max), dtype=bool)
    prox = np.zeros((B, n_max, n_max, M))
    num_real = np.zeros(B, dtype=np.int64)
    for b, ego in enumerate(egos):
        k = len(ego)
        n = k + n_g
        num_real[b] = k
        token_ids[b, :k] = ego.members
        token_ids[b, k:n] = GLOBAL
        global_slot[b, k:n] = np.arange(n_g)
        mask[b, :n, :n] = True
        prox[b, :n, :n] = proximity_encoding(index, ego, n_g, M)
    # PAD rows attend only to themselves so no softmax row is empty
    diag = np.arange(n_max)
    mask[:, diag, diag] = True
    centers = np.array([e.center for e in egos], dtype=np.int64)
    if labels is None:
        labels = index.graph.labels[centers]
    return EgoBatch(
        token_ids=token_ids,
        global_slot=global_slot,
        attn_mask=mask,
        proximity=prox,
        labels=np.asarray(labels, dtype=np.int64),
        group_key=centers,
        num_real=num_real,
        egos=list(egos),
    )


def epoch_plan(
    index: ProximityIndex,
    cfg: SamplerConfig,
    epoch: int,
    nodes: Sequence[int],
    batch_size: int,
    workers: int = 1,
) -> Iterator[EgoBatch]:
    """Shuffled batches whose S samples per node stay contiguous inside one batch."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("epoch_plan needs at least one node")
    S = cfg.samples_per_node
    if batch_size < S:
        raise ValueError(f"batch size {batch_size} < samples per node {S}")
    order = nodes[_rng(cfg, PLAN_STREAM, epoch).permutation(len(nodes))]
    per_batch = batch_size // S
    g = index.graph
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, len(order), per_batch):
            chunk = order[start : start + per_batch]
            jobs = [(int(c), (epoch, s)) for c in chunk for s in range(S)]
            if pool is None:
                egos = [sample_ego_graph(g, c, cfg, key) for c, key in jobs]
            else:
                egos = list(pool.map(lambda job: sample_ego_graph(g, job[0], cfg, job[1]), jobs))
            yield build_batch(egos, index, cfg)
    finally:
        if pool is not None:
            pool.shutdown()


def inference_egos(g: Graph, center: int, cfg: SamplerConfig, s_prime: int, seed: int) -> list[EgoGraph]:
    """S' independent test-time samples from the inference seed stream."""
    return [
        sample_ego_graph(g, center, cfg, (seed, s), stream=INFERENCE_STREAM) for s in range(s_prime)
    ]
