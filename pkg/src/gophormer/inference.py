"""Prediction modes (multi-sample, full ego-graph, full graph) and accuracy reports."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .graph import Graph
from .model import Gophormer
from .node2seq import (
    EgoGraph,
    ProximityIndex,
    SamplerConfig,
    build_batch,
    full_ego_graph,
    inference_egos,
)

log = logging.getLogger(__name__)

MODES = ("multi_sample", "full_ego", "full_graph")
DEFAULT_TOKEN_CAP = 6000


class InfeasibleRequest(RuntimeError):
    """The request exceeds the configured token cap."""


@dataclass
class InferenceConfig:
    mode: str = "multi_sample"
    s_prime: int = 8
    seed: int = 7919
    token_cap: int = DEFAULT_TOKEN_CAP
    batch_size: int = 256

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.s_prime < 1:
            raise ValueError("s_prime must be >= 1")


def predict_egos(
    model: Gophormer, index: ProximityIndex, egos: Sequence[EgoGraph], cfg: SamplerConfig, batch_size: int = 256
) -> np.ndarray:
    """Class distributions ``[len(egos), C]``, eval mode, batched."""
    out = []
    feats = index.graph.features
    for start in range(0, len(egos), batch_size):
        batch = build_batch(egos[start : start + batch_size], index, cfg)
        out.append(model.predict_proba(batch, feats))
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.num_classes))


def multi_sample_predict(
    model: Gophormer,
    index: ProximityIndex,
    nodes,
    cfg: SamplerConfig,
    s_prime: int,
    seed: int,
    batch_size: int = 256,
) -> np.ndarray:
    """Average of S' independently sampled ego-graph predictions per node.

    ``nodes`` may be a single id (returns ``[C]``) or a sequence (returns ``[N, C]``).
    """
    single = np.ndim(nodes) == 0
    nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
    egos = [e for c in nodes for e in inference_egos(index.graph, int(c), cfg, s_prime, seed)]
    probs = predict_egos(model, index, egos, cfg, batch_size)
    probs = probs.reshape(len(nodes), s_prime, -1).mean(axis=1)
    return probs[0] if single else probs


def full_ego_predict(
    model: Gophormer,
    index: ProximityIndex,
    nodes,
    cfg: SamplerConfig,
    token_cap: int = DEFAULT_TOKEN_CAP,
    batch_size: int = 64,
) -> np.ndarray:
    """Deterministic prediction from the complete D-hop neighborhood."""
    single = np.ndim(nodes) == 0
    nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
    egos = [full_ego_graph(index.graph, int(c), cfg.depth) for c in nodes]
    worst = max(len(e) for e in egos) + cfg.num_global
    if worst > token_cap:
        raise InfeasibleRequest(f"full ego-graph needs {worst} tokens, cap is {token_cap}")
    # group similar sizes so padding stays small
    order = np.argsort([len(e) for e in egos], kind="stable")
    probs = np.empty((len(nodes), model.num_classes))
    for start in range(0, len(order), batch_size):
        part = order[start : start + batch_size]
        probs[part] = predict_egos(model, index, [egos[i] for i in part], cfg, batch_size)
    return probs[0] if single else probs


def full_graph_memory(num_nodes: int, num_global: int, views: int, heads: int = 8) -> dict:
    """Byte estimates for one full-graph sequence in double precision."""
    n = num_nodes + num_global
    return {
        "tokens": n,
        "proximity_bytes": n * n * views * 8,
        "attention_bytes": n * n * heads * 8,
    }


def _fmt_bytes(b: float) -> str:
    for unit in ("B", "KB", "MB", "GB", "TB"):
        if b < 1000 or unit == "TB":
            return f"{b:.1f} {unit}"
        b /= 1000.0


def full_graph_batch(index: ProximityIndex, cfg: SamplerConfig, token_cap: int = DEFAULT_TOKEN_CAP, report=print):
    """The whole graph as one token sequence (node i at position i) plus global slots."""
    g = index.graph
    est = full_graph_memory(g.num_nodes, cfg.num_global, cfg.proximity_views)
    if report is not None:
        report(
            f"full-graph sequence: {est['tokens']} tokens, proximity tensor "
            f"({est['tokens']}^2 x {cfg.proximity_views} x 8 B) = {_fmt_bytes(est['proximity_bytes'])}"
        )
    if est["tokens"] > token_cap:
        raise InfeasibleRequest(f"full-graph mode needs {est['tokens']} tokens, cap is {token_cap}")
    ego = EgoGraph(center=0, members=np.arange(g.num_nodes), hops=np.zeros(g.num_nodes, dtype=np.int64))
    return build_batch([ego], index, cfg)


def full_graph_logits(model: Gophormer, batch, features, train=False, rng=None) -> ad.Tensor:
    """``[N, C]`` logits, one per real token of a full-graph batch."""
    h = model.encode(batch, features, train, rng)
    n_real = int(batch.num_real[0])
    z = ad.slice_(h, (0, slice(0, n_real), slice(None)))
    return model.logits(z)


def full_graph_forward(
    model: Gophormer, index: ProximityIndex, cfg: SamplerConfig, token_cap: int = DEFAULT_TOKEN_CAP, report=print
) -> np.ndarray:
    """Class distributions for every node from one full-graph pass."""
    batch = full_graph_batch(index, cfg, token_cap, report)
    with ad.no_grad():
        return ad.softmax(full_graph_logits(model, batch, index.graph.features)).data


def predict(model: Gophormer, index: ProximityIndex, nodes, cfg: SamplerConfig, icfg: InferenceConfig, seed=None):
    seed = icfg.seed if seed is None else seed
    if icfg.mode == "multi_sample":
        return multi_sample_predict(model, index, nodes, cfg, icfg.s_prime, seed, icfg.batch_size)
    if icfg.mode == "full_ego":
        return full_ego_predict(model, index, nodes, cfg, icfg.token_cap)
    return full_graph_forward(model, index, cfg, icfg.token_cap)[np.asarray(nodes)]


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    split: str
    mode: str
    s_prime: int | None
    seeds: list[int]
    accuracies: list[float]
    mean: float
    std: float
    per_class: dict[str, float]
    fingerprint: str
    single_run: bool
    predictions_path: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def summary(self) -> str:
        sp = f" S'={self.s_prime}" if self.s_prime is not None else ""
        flag = " (single run)" if self.single_run else ""
        return f"{self.split} accuracy [{self.mode}{sp}]: {self.mean:.4f} ± {self.std:.4f} over {len(self.seeds)} seed(s){flag}"


def fingerprint(model: Gophormer, graph: Graph, icfg: InferenceConfig, split: str) -> str:
    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    for arr in (graph.indptr, graph.indices, graph.features, graph.labels, graph.split):
        h.update(np.ascontiguousarray(arr).tobytes())
    cfg = asdict(icfg)
    cfg.pop("batch_size", None)
    h.update(json.dumps(cfg, sort_keys=True).encode())
    h.update(split.encode())
    return h.hexdigest()[:16]


def write_predictions(path, nodes, probs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for node, row in zip(np.asarray(nodes).tolist(), probs):
            fh.write(
                json.dumps({"node_id": node, "argmax_class": int(np.argmax(row)), "probabilities": [float(x) for x in row]})
                + "\n"
            )
    return path


def evaluate(
    model: Gophormer,
    index: ProximityIndex,
    split: str,
    cfg: SamplerConfig,
    icfg: InferenceConfig,
    seeds: Sequence[int] = (0,),
    predictions_path=None,
) -> EvalReport:
    """Accuracy over ``split`` repeated per inference seed; parameters are left untouched."""
    g = index.graph
    nodes = g.nodes_in(split)
    if len(nodes) == 0:
        raise ValueError(f"split {split!r} is empty")
    seeds = list(seeds)
    if icfg.mode != "multi_sample":
        # deterministic modes: one pass serves every seed
        probs = predict(model, index, nodes, cfg, icfg)
        runs = [probs] * len(seeds)
    else:
        runs = [predict(model, index, nodes, cfg, icfg, seed=icfg.seed + s) for s in seeds]
    y = g.labels[nodes]
    accs = [float((p.argmax(axis=1) == y).mean()) for p in runs]
    pred = runs[0].argmax(axis=1)
    per_class = {}
    for c in range(g.num_classes):
        sel = y == c
        if sel.any():
            per_class[str(c)] = float((pred[sel] == c).mean())
    if predictions_path is not None:
        write_predictions(predictions_path, nodes, runs[0])
    return EvalReport(
        split=split,
        mode=icfg.mode,
        s_prime=icfg.s_prime if icfg.mode == "multi_sample" else None,
        seeds=seeds,
        accuracies=accs,
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        per_class=per_class,
        fingerprint=fingerprint(model, g, icfg, split),
        single_run=len(seeds) == 1,
        predictions_path=str(predictions_path) if predictions_path else None,
    )
