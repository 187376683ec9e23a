"""Train/evaluate the component ablations and emit a comparison table."""
from __future__ import annotations

import copy
import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .graph import Graph
from .inference import InferenceConfig, evaluate
from .model import Gophormer
from .node2seq import ProximityIndex
from .training import fit

log = logging.getLogger(__name__)

SUITE = ("full", "wo_PE", "wo_CR", "wo_GN", "FullInf", "MSI_k")
MSI_KS = (1, 2, 4, 8, 16)


@dataclass
class AblationRow:
    variant: str
    accuracies: list[float]
    mean: float
    std: float
    notes: dict = field(default_factory=dict)


def _variant_config(base: RunConfig, variant: str) -> RunConfig:
    cfg = copy.deepcopy(base)
    if variant == "wo_PE":
        cfg.model.use_proximity = False
    elif variant == "wo_CR":
        cfg.train.lam = 0.0
    elif variant == "wo_GN":
        cfg.sampler.num_global = 0
    return cfg


def train_variant(graph: Graph, cfg: RunConfig, seed: int):
    cfg = copy.deepcopy(cfg)
    cfg.set_seed(seed)
    index = ProximityIndex(graph, cfg.sampler)
    model = Gophormer(cfg.model, graph.feature_dim, graph.num_classes, cfg.sampler.num_global, cfg.sampler.proximity_views)
    result = fit(graph, model, cfg.sampler, cfg.train, index=index, workers=cfg.workers)
    model.load_state(result.best_state)
    return model, index, cfg, result


def run_ablation(
    graph: Graph,
    base: RunConfig,
    seeds=(0, 1, 2),
    suite=SUITE,
    msi_ks=MSI_KS,
    split: str = "test",
) -> list[AblationRow]:
    """One row per variant (MSI_k expands to one row per k), mean ± std over ``seeds``.

    FullInf and MSI_k reuse the models trained for the ``full`` variant.
    """
    suite = list(suite)
    unknown = set(suite) - set(SUITE)
    if unknown:
        raise ValueError(f"unknown ablation variants {sorted(unknown)}")
    need_full = any(v in suite for v in ("full", "FullInf", "MSI_k"))
    scores: dict[str, list[float]] = {}
    notes: dict[str, dict] = {}

    def record(name, acc, **extra):
        scores.setdefault(name, []).append(acc)
        notes.setdefault(name, {}).update(extra)

    for seed in seeds:
        if need_full:
            model, index, cfg, _ = train_variant(graph, base, seed)
            base_icfg = cfg.inference
            if "full" in suite:
                rep = evaluate(model, index, split, cfg.sampler, base_icfg, seeds=[seed])
                record("full", rep.mean, s_prime=base_icfg.s_prime)
            if "FullInf" in suite:
                icfg = InferenceConfig(mode="full_ego", token_cap=base_icfg.token_cap)
                rep = evaluate(model, index, split, cfg.sampler, icfg, seeds=[seed])
                record("FullInf", rep.mean)
            if "MSI_k" in suite:
                for k in msi_ks:
                    icfg = InferenceConfig(mode="multi_sample", s_prime=k, seed=base_icfg.seed)
                    rep = evaluate(model, index, split, cfg.sampler, icfg, seeds=[seed])
                    record(f"MSI_{k}", rep.mean, s_prime=k)
        for variant in ("wo_PE", "wo_CR", "wo_GN"):
            if variant not in suite:
                continue
            model, index, cfg, result = train_variant(graph, _variant_config(base, variant), seed)
            rep = evaluate(model, index, split, cfg.sampler, cfg.inference, seeds=[seed])
            extra = {}
            if variant == "wo_PE":
                extra["prox_bias_all_zero"] = all(
                    not np.any(p.data) for k, p in model.params.items() if k.endswith(".prox_bias")
                )
            if variant == "wo_CR":
                extra["loss_equals_sup"] = all(
                    r["loss"] == r["loss_sup"] for r in result.records if r.get("loss") is not None
                )
            record(variant, rep.mean, **extra)
        log.info("ablation seed %d done", seed)

    rows = []
    for name, accs in scores.items():
        rows.append(AblationRow(name, accs, float(np.mean(accs)), float(np.std(accs)), notes.get(name, {})))
    return rows


def format_table(rows: list[AblationRow]) -> str:
    width = max([len(r.variant) for r in rows] + [7])
    lines = [f"{'variant':<{width}}  {'mean':>7}  {'std':>7}  runs"]
    for r in rows:
        lines.append(f"{r.variant:<{width}}  {r.mean:7.4f}  {r.std:7.4f}  {len(r.accuracies)}")
    return "\n".join(lines) + "\n"


def to_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "mean", "std", "runs", "accuracies"])
    for r in rows:
        w.writerow([r.variant, f"{r.mean:.6f}", f"{r.std:.6f}", len(r.accuracies), " ".join(f"{a:.6f}" for a in r.accuracies)])
    return buf.getvalue()
