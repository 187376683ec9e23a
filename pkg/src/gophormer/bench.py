"""Token-count and memory scaling of ego-graph vs full-graph inputs."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .datasets import random_regular
from .inference import full_graph_batch, full_graph_logits, full_graph_memory
from .model import Gophormer, ModelConfig
from .node2seq import ProximityIndex, SamplerConfig, build_batch, sample_ego_graph


@dataclass
class BenchRow:
    nodes: int
    ego_tokens: int
    ego_tokens_observed: int
    ego_attention_bytes: int
    ego_forward_ms: float
    full_tokens: int
    full_feasible: bool
    full_proximity_bytes: int
    full_attention_bytes: int
    full_forward_ms: float | None
    note: str = ""


def bench(
    sizes=(1000, 2000, 4000, 8000),
    sampler: SamplerConfig | None = None,
    model_cfg: ModelConfig | None = None,
    degree: int = 10,
    token_cap: int = 6000,
    memory_budget: float = 1.0e9,
    ego_batch: int = 64,
    seed: int = 0,
    time_full: bool = True,
) -> list[BenchRow]:
    """One row per graph size on random ``degree``-regular graphs.

    Full-graph forward passes are only timed when the sequence is under the
    token cap and the attention/proximity estimate fits ``memory_budget`` bytes.
    """
    sampler = sampler or SamplerConfig()
    model_cfg = model_cfg or ModelConfig()
    M, H = sampler.proximity_views, model_cfg.heads
    rows = []
    for n in sizes:
        g = random_regular(int(n), degree=degree, seed=seed)
        index = ProximityIndex(g, sampler)
        model = Gophormer(model_cfg, g.feature_dim, g.num_classes, sampler.num_global, M)
        centers = np.random.default_rng(seed).choice(g.num_nodes, size=min(ego_batch, g.num_nodes), replace=False)
        egos = [sample_ego_graph(g, int(c), sampler, (0, 0)) for c in centers]
        batch = build_batch(egos, index, sampler)
        t0 = time.perf_counter()
        with ad.no_grad():
            model.forward(batch, g.features)
        ego_ms = (time.perf_counter() - t0) * 1000.0
        bound = sampler.max_tokens
        est = full_graph_memory(g.num_nodes, sampler.num_global, M, H)
        feasible = est["tokens"] <= token_cap
        full_ms, note = None, ""
        if not feasible:
            note = f"infeasible: {est['tokens']} tokens > cap {token_cap}"
        elif not time_full:
            note = "full-graph timing disabled"
        elif est["proximity_bytes"] + 3 * est["attention_bytes"] > memory_budget:
            note = "full-graph timing skipped: over memory budget"
        else:
            fb = full_graph_batch(index, sampler, token_cap, report=None)
            t0 = time.perf_counter()
            with ad.no_grad():
                full_graph_logits(model, fb, g.features)
            full_ms = (time.perf_counter() - t0) * 1000.0
        rows.append(
            BenchRow(
                nodes=g.num_nodes,
                ego_tokens=bound,
                ego_tokens_observed=int(batch.seq_len),
                ego_attention_bytes=bound * bound * (M + H) * 8,
                ego_forward_ms=round(ego_ms, 3),
                full_tokens=est["tokens"],
                full_feasible=feasible,
                full_proximity_bytes=est["proximity_bytes"],
                full_attention_bytes=est["attention_bytes"],
                full_forward_ms=None if full_ms is None else round(full_ms, 3),
                note=note,
            )
        )
    return rows


def format_bench(rows: list[BenchRow]) -> str:
    head = (
        f"{'|V|':>6}  {'ego_tok':>7}  {'ego_seen':>8}  {'ego_mem_B':>10}  {'ego_ms':>8}  "
        f"{'full_tok':>8}  {'full_phi_B':>12}  {'full_ms':>9}  note"
    )
    lines = [head]
    for r in rows:
        fm = "-" if r.full_forward_ms is None else f"{r.full_forward_ms:.1f}"
        lines.append(
            f"{r.nodes:>6}  {r.ego_tokens:>7}  {r.ego_tokens_observed:>8}  {r.ego_attention_bytes:>10}  "
            f"{r.ego_forward_ms:>8.1f}  {r.full_tokens:>8}  {r.full_proximity_bytes:>12}  {fm:>9}  {r.note}"
        )
    return "\n".join(lines) + "\n"
