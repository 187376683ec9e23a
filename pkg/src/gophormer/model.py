"""Ego-graph transformer with proximity-biased attention and center-node readout."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .node2seq import GLOBAL, PAD, EgoBatch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
DECAYED_SUFFIXES = (".wq", ".wk", ".wv", ".wo", ".w1", ".w2")


@dataclass
class ModelConfig:
    hidden: int = 64
    heads: int = 8
    layers: int = 2
    ffn_mult: int = 4
    attn_dropout: float = 0.5
    ffn_dropout: float = 0.5
    # "input": global slots join the token sequence before layer 1.
    # "first_ffn": global embeddings are written into the layer-1 FFN input.
    global_injection: str = "input"
    use_proximity: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.global_injection not in ("input", "first_ffn"):
            raise ValueError(f"unknown global_injection {self.global_injection!r}")


class Gophormer:
    """Parameter container plus forward pass.

    ``params`` is an ordered name -> Tensor mapping; everything learnable
    lives there so optimizers and checkpoints can treat it uniformly.
    """

    def __init__(self, cfg: ModelConfig, feature_dim: int, num_classes: int, num_global: int, views: int):
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.num_global = num_global
        self.views = views
        self.params: dict[str, Tensor] = {}
        self._init_params()
        if not cfg.use_proximity:
            self.freeze_proximity()
        log.info("model has %d parameters", self.num_parameters())

    def _add(self, name: str, value: np.ndarray, trainable: bool = True) -> None:
        self.params[name] = Tensor(np.ascontiguousarray(value, dtype=np.float64), requires_grad=trainable, name=name)

    def _init_params(self) -> None:
        cfg = self.cfg
        rng = np.random.default_rng(cfg.init_seed)
        d, f = cfg.hidden, cfg.hidden * cfg.ffn_mult
        self._add("in_proj", ad.glorot(rng, self.feature_dim, d))
        for layer in range(cfg.layers):
            p = f"layer{layer}"
            for w in ("wq", "wk", "wv", "wo"):
                self._add(f"{p}.{w}", ad.glorot(rng, d, d))
            self._add(f"{p}.prox_bias", np.zeros((self.views, cfg.heads)))
            self._add(f"{p}.ln1.gamma", np.ones(d))
            self._add(f"{p}.ln1.beta", np.zeros(d))
            self._add(f"{p}.w1", ad.glorot(rng, d, f))
            self._add(f"{p}.w2", ad.glorot(rng, f, d))
            self._add(f"{p}.ln2.gamma", np.ones(d))
            self._add(f"{p}.ln2.beta", np.zeros(d))
        self._add("globals", rng.normal(0.0, 0.02, size=(self.num_global, d)))
        self._add("classifier", ad.glorot(rng, d, self.num_classes))

    # ------------------------------------------------------------------

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def trainable(self) -> list[Tensor]:
        return [p for p in self.params.values() if p.requires_grad]

    def freeze_proximity(self) -> None:
        for name, p in self.params.items():
            if name.endswith(".prox_bias"):
                p.data[...] = 0.0
                p.requires_grad = False

    def decayed(self, name: str) -> bool:
        return name in ("in_proj", "classifier") or name.endswith(DECAYED_SUFFIXES)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"{k}: checkpoint shape {v.shape} != model shape {self.params[k].shape}")
            self.params[k].data[...] = v

    # ------------------------------------------------------------------
    # forward pieces

    def embed_tokens(self, batch: EgoBatch, features: np.ndarray) -> Tensor:
        if features.shape[1] != self.feature_dim:
            raise ValueError(f"feature width {features.shape[1]} != model input width {self.feature_dim}")
        ids = batch.token_ids
        real = ids >= 0
        uniq, inv = np.unique(ids[real], return_inverse=True)
        proj = ad.matmul(Tensor(features[uniq]), self.params["in_proj"])
        U, ng = len(uniq), self.num_global
        zero = Tensor(np.zeros((1, self.cfg.hidden)))
        if self.cfg.global_injection == "input":
            table = ad.concat([proj, self.params["globals"], zero], axis=0)
            glob_row = U + batch.global_slot
        else:
            table = ad.concat([proj, zero], axis=0)
            glob_row = np.full(ids.shape, U)
        index = np.full(ids.shape, U + (ng if self.cfg.global_injection == "input" else 0))
        index[real] = inv
        is_global = ids == GLOBAL
        index[is_global] = glob_row[is_global]
        return ad.take_rows(table, index)

    def pe_mha(
        self,
        h: Tensor,
        proximity: np.ndarray,
        mask: np.ndarray,
        layer: int,
        train: bool = False,
        rng: np.random.Generator | None = None,
        probe: dict | None = None,
    ) -> Tensor:
        cfg = self.cfg
        P = self.params
        p = f"layer{layer}"
        B, n, d = h.shape
        H = cfg.heads
        dk = d // H

        def heads(x: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(x, (B, n, H, dk)), (0, 2, 1, 3))

        q = heads(ad.matmul(h, P[f"{p}.wq"]))
        k = heads(ad.matmul(h, P[f"{p}.wk"]))
        v = heads(ad.matmul(h, P[f"{p}.wv"]))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
        if cfg.use_proximity:
            bias = ad.matmul(Tensor(proximity), P[f"{p}.prox_bias"])  # [B, n, n, H]
            scores = ad.add(scores, ad.transpose(bias, (0, 3, 1, 2)))
        attn = ad.softmax(scores, mask[:, None, :, :])
        if probe is not None:
            probe.setdefault("attn", []).append(attn.data)
        attn = ad.dropout(attn, cfg.attn_dropout, rng, train)
        out = ad.matmul(attn, v)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (B, n, d))
        return ad.matmul(out, P[f"{p}.wo"])

    def layer(self, h, proximity, mask, layer, batch=None, train=False, rng=None, probe=None) -> Tensor:
        P = self.params
        p = f"layer{layer}"
        a = self.pe_mha(h, proximity, mask, layer, train, rng, probe)
        h1 = ad.layer_norm(ad.add(a, h), P[f"{p}.ln1.gamma"], P[f"{p}.ln1.beta"])
        if layer == 0 and self.cfg.global_injection == "first_ffn" and self.num_global and batch is not None:
            h1 = self._inject_globals(h1, batch)
        f = ad.relu(ad.matmul(h1, P[f"{p}.w1"]))
        f = ad.dropout(f, self.cfg.ffn_dropout, rng, train)
        f = ad.matmul(f, P[f"{p}.w2"])
        return ad.layer_norm(ad.add(f, h1), P[f"{p}.ln2.gamma"], P[f"{p}.ln2.beta"])

    def _inject_globals(self, h: Tensor, batch: EgoBatch) -> Tensor:
        is_global = (batch.token_ids == GLOBAL)[..., None].astype(np.float64)
        table = ad.concat([Tensor(np.zeros((1, self.cfg.hidden))), self.params["globals"]], axis=0)
        inject = ad.take_rows(table, batch.global_slot + 1)
        return ad.add(ad.mul(h, 1.0 - is_global), inject)

    def _layer_mask(self, batch: EgoBatch, layer: int) -> np.ndarray:
        if layer == 0 and self.cfg.global_injection == "first_ffn" and self.num_global:
            mask = batch.attn_mask.copy()
            is_global = batch.token_ids == GLOBAL
            mask &= ~is_global[:, None, :]
            mask &= ~is_global[:, :, None]
            diag = np.arange(batch.seq_len)
            mask[:, diag, diag] = True
            return mask
        return batch.attn_mask

    def encode(self, batch: EgoBatch, features: np.ndarray, train=False, rng=None, probe=None) -> Tensor:
        h = self.embed_tokens(batch, features)
        for layer in range(self.cfg.layers):
            mask = self._layer_mask(batch, layer)
            h = self.layer(h, batch.proximity, mask, layer, batch, train, rng, probe)
        return h

    @staticmethod
    def readout(h: Tensor, batch: EgoBatch | None = None) -> Tensor:
        return ad.slice_(h, (slice(None), 0, slice(None)))

    def logits(self, z: Tensor) -> Tensor:
        return ad.matmul(z, self.params["classifier"])

    def classify(self, z: Tensor) -> Tensor:
        return ad.softmax(self.logits(z))

    def forward(self, batch: EgoBatch, features: np.ndarray, train=False, rng=None, probe=None) -> Tensor:
        """Class logits ``[B, C]`` for the center of every instance."""
        h = self.encode(batch, features, train, rng, probe)
        return self.logits(self.readout(h, batch))

    def predict_proba(self, batch: EgoBatch, features: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return ad.softmax(self.forward(batch, features)).data


def classify(z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """softmax(Z Θ) on plain arrays."""
    with ad.no_grad():
        return ad.softmax(ad.matmul(Tensor(np.asarray(z, float)), Tensor(np.asarray(theta, float)))).data


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Gophormer, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": CHECKPOINT_FORMAT,
        "model": asdict(model.cfg),
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "num_global": model.num_global,
        "views": model.views,
        "shapes": {k: list(v.shape) for k, v in model.params.items()},
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v.data for k, v in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path) -> tuple[Gophormer, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(z["__header__"].tobytes().decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
        cfg = ModelConfig(**header["model"])
        model = Gophormer(cfg, header["feature_dim"], header["num_classes"], header["num_global"], header["views"])
        model.load_state({k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")})
    return model, header
