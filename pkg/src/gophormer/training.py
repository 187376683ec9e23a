"""Supervised + sharpened-consistency objective, Adam, warmup/plateau schedule, training loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import TRAIN, Graph
from .model import Gophormer
from .node2seq import ProximityIndex, SamplerConfig, epoch_plan

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite; ``best_state`` holds the last good parameters."""

    def __init__(self, msg: str, best_state: dict | None):
        super().__init__(msg)
        self.best_state = best_state


@dataclass
class TrainConfig:
    peak_lr: float = 2e-4
    end_lr: float = 1e-9
    warmup_steps: int = 50
    plateau_patience: int = 10
    decay_factor: float = 0.5
    weight_decay: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    lam: float = 1.0
    temperature: float = 0.5
    eval_every: int = 1
    early_stop: int = 30
    val_s_prime: int = 4
    stop_grad_target: bool = True
    consistency_on_unlabeled: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # Row-normalized proximities are ~1/(deg+1), so b needs large values to
    # move attention logits; this scales the step size of every proximity bias.
    prox_lr_mult: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.temperature <= 1.0:
            raise ValueError(f"temperature must lie in (0, 1], got {self.temperature}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.prox_lr_mult <= 0:
            raise ValueError("prox_lr_mult must be positive")


# ---------------------------------------------------------------------------
# losses


def _check_rows(probs: np.ndarray) -> None:
    err = np.abs(probs.sum(axis=-1) - 1.0)
    if np.any(err > 1e-6):
        raise ValueError(f"prediction rows must sum to 1 (worst deviation {err.max():.3g})")


def supervised_loss(probs: Tensor, labels: np.ndarray, S: int, labeled: np.ndarray | None = None) -> Tensor:
    """Cross entropy summed over each group's S samples, scaled by 1/S, averaged over groups.

    ``probs`` is ``[G*S, C]`` with the S rows of a group contiguous.
    """
    probs = ad.as_tensor(probs)
    _check_rows(probs.data)
    n, C = probs.shape
    if n % S:
        raise ValueError(f"{n} prediction rows do not split into groups of {S}")
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(n)
    if labeled is None:
        labeled = np.ones(n // S, dtype=bool)
    row_mask = np.repeat(labeled, S)
    n_groups = int(labeled.sum())
    if n_groups == 0:
        return Tensor(np.array(0.0))
    onehot = np.zeros((n, C))
    onehot[rows[row_mask], labels[row_mask]] = 1.0
    ll = ad.sum_(ad.mul(ad.log(probs, floor=LOG_FLOOR), onehot))
    return ad.mul(ll, -1.0 / (S * n_groups))


def sharpen(mean_dist: np.ndarray, T: float) -> np.ndarray:
    """Temperature sharpening along the last axis: p^(1/T), renormalized."""
    mean_dist = np.asarray(mean_dist, dtype=np.float64)
    if T <= 0:
        raise ValueError("temperature must be positive")
    if np.any(mean_dist.sum(axis=-1) <= 0):
        raise ValueError("cannot sharpen an all-zero distribution")
    # scale by the row max first so tiny temperatures do not underflow
    scaled = mean_dist / mean_dist.max(axis=-1, keepdims=True)
    powered = scaled ** (1.0 / T)
    return powered / powered.sum(axis=-1, keepdims=True)


def consistency_loss(probs: Tensor, S: int, T: float, stop_grad: bool = True) -> Tensor:
    """Mean over groups of (1/S) Σ_s ||sharpen(mean_s p_s) - p_s||²."""
    probs = ad.as_tensor(probs)
    n, C = probs.shape
    if n % S:
        raise ValueError(f"{n} prediction rows do not split into groups of {S}")
    if S == 1:
        log.warning("consistency loss is vacuous with one sample per node")
        return Tensor(np.array(0.0))
    G = n // S
    grouped = ad.reshape(probs, (G, S, C))
    if stop_grad:
        target = Tensor(sharpen(grouped.data.mean(axis=1), T)[:, None, :])
    else:
        target = _sharpen_tensor(ad.mean(grouped, axis=1, keepdims=True), T)
    dist = ad.sq_l2(target, grouped)  # [G, S]
    return ad.mul(ad.sum_(dist), 1.0 / (S * G))


def _sharpen_tensor(mean_dist: Tensor, T: float) -> Tensor:
    # differentiable variant: softmax(log(p) / T) == p^(1/T) / Σ p^(1/T)
    return ad.softmax(ad.mul(ad.log(mean_dist, floor=LOG_FLOOR), 1.0 / T))


def total_loss(sup: Tensor, con: Tensor, lam: float) -> Tensor:
    if lam == 0:
        return ad.as_tensor(sup)
    return ad.add(sup, ad.mul(con, lam))


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class TrainState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    lr: float = 0.0
    skipped: int = 0
    best_val: float = -math.inf
    best_state: dict | None = None
    plateau_bad: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: TrainState,
    lr: float,
    cfg: TrainConfig,
    decayed=lambda name: True,
    lr_scale=lambda name: 1.0,
) -> bool:
    """One bias-corrected Adam update with decoupled weight decay.

    Returns False (and leaves everything untouched) when any gradient is non-finite.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient at step %d; update skipped", state.step + 1)
        return False
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * lr_scale(name)
        if cfg.weight_decay and decayed(name):
            p.data -= step * cfg.weight_decay * p.data
        p.data -= step * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    state.lr = lr
    return True


def plateau_decays(history, patience: int) -> int:
    """Number of decays a reduce-on-plateau rule (maximizing) applies over ``history``."""
    best, bad, decays = -math.inf, 0, 0
    for value in history:
        if value > best:
            best, bad = value, 0
        else:
            bad += 1
            if bad > patience:
                decays += 1
                bad = 0
    return decays


def lr_schedule(step: int, val_history, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr``, then ×decay_factor per plateau, floored at ``end_lr``.

    ``val_history`` lists validation accuracies recorded after warmup.
    """
    if step <= cfg.warmup_steps:
        lr = cfg.peak_lr * step / cfg.warmup_steps
    else:
        lr = cfg.peak_lr * cfg.decay_factor ** plateau_decays(val_history, cfg.plateau_patience)
    return min(cfg.peak_lr, max(cfg.end_lr, lr))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class FitResult:
    best_state: dict
    best_val: float
    records: list[dict]
    state: TrainState
    epochs_run: int


def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def fit(
    graph: Graph,
    model: Gophormer,
    sampler_cfg: SamplerConfig,
    train_cfg: TrainConfig,
    index: ProximityIndex | None = None,
    log_path: Path | None = None,
    val_nodes: np.ndarray | None = None,
    workers: int = 1,
    progress: bool = False,
) -> FitResult:
    """Train ``model`` in place; returns the best-validation snapshot and the metric log."""
    from .inference import multi_sample_predict

    index = index or ProximityIndex(graph, sampler_cfg)
    train_nodes = graph.nodes_in(TRAIN)
    if len(train_nodes) == 0:
        raise ValueError("empty train split")
    if val_nodes is None:
        val_nodes = graph.nodes_in("val")
    nodes = train_nodes
    if train_cfg.consistency_on_unlabeled:
        nodes = np.arange(graph.num_nodes)
    is_train = graph.split == TRAIN
    S = sampler_cfg.samples_per_node
    features = graph.features
    drop_rng = np.random.default_rng([sampler_cfg.master_seed, train_cfg.seed, 3])
    state = TrainState()
    params = model.params
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    val_hist: list[float] = []

    def lr_scale(name: str) -> float:
        return train_cfg.prox_lr_mult if name.endswith(".prox_bias") else 1.0

    records: list[dict] = []
    fh = open(log_path, "w") if log_path else None
    best_state = model.state()
    best_val = -math.inf
    since_best = 0
    t0 = time.perf_counter()
    epoch = -1
    try:
        for epoch in range(train_cfg.epochs):
            last = None
            for batch in epoch_plan(index, sampler_cfg, epoch, nodes, train_cfg.batch_size, workers):
                lr = lr_schedule(state.step + 1, val_hist, train_cfg)
                for p in trainable.values():
                    p.grad = None
                labeled = is_train[batch.group_key[::S]]
                with Tape() as tape:
                    logits = model.forward(batch, features, train=True, rng=drop_rng)
                    probs = ad.softmax(logits)
                    sup = supervised_loss(probs, batch.labels, S, labeled)
                    if train_cfg.lam > 0:
                        con = consistency_loss(probs, S, train_cfg.temperature, train_cfg.stop_grad_target)
                    else:
                        con = consistency_loss(ad.detach(probs), S, train_cfg.temperature) if S > 1 else Tensor(np.array(0.0))
                    loss = total_loss(sup, con, train_cfg.lam)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"non-finite loss at step {state.step + 1}", best_state)
                grads = ad.backward(tape, loss, trainable.values())
                adam_step(params, dict(zip(trainable, grads)), state, lr, train_cfg, model.decayed, lr_scale)
                last = {
                    "step": state.step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": float(loss.data),
                    "loss_sup": float(sup.data),
                    "loss_con": float(con.data),
                    "val_acc": None,
                    "wallclock_ms": round((time.perf_counter() - t0) * 1000.0, 3),
                }
                records.append(last)
                if fh:
                    fh.write(_dump(last) + "\n")
            if (epoch + 1) % train_cfg.eval_every == 0 and len(val_nodes):
                probs = multi_sample_predict(
                    model, index, val_nodes, sampler_cfg, train_cfg.val_s_prime, seed=train_cfg.seed
                )
                val_acc = float((probs.argmax(axis=1) == graph.labels[val_nodes]).mean())
                eval_rec = {
                    "step": state.step,
                    "epoch": epoch,
                    "lr": state.lr,
                    "loss_sup": None,
                    "loss_con": None,
                    "val_acc": val_acc,
                    "wallclock_ms": round((time.perf_counter() - t0) * 1000.0, 3),
                }
                records.append(eval_rec)
                if fh:
                    fh.write(_dump(eval_rec) + "\n")
                    fh.flush()
                if state.step >= train_cfg.warmup_steps:
                    val_hist.append(val_acc)
                if progress:
                    log.info("epoch %d step %d val_acc %.4f lr %.2e", epoch, state.step, val_acc, state.lr)
                if val_acc > best_val:
                    best_val, best_state, since_best = val_acc, model.state(), 0
                else:
                    since_best += 1
                    if since_best >= train_cfg.early_stop:
                        break
    finally:
        if fh:
            fh.close()
    if best_val == -math.inf:
        best_state = model.state()
    state.best_val, state.best_state = best_val, best_state
    return FitResult(best_state, best_val, records, state, epoch + 1)


def strip_wallclock(records) -> list[dict]:
    return [{k: v for k, v in r.items() if k != "wallclock_ms"} for r in records]
