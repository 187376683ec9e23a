"""Run configuration and its ``section.field = value`` text format."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .inference import InferenceConfig
from .model import ModelConfig
from .node2seq import SamplerConfig
from .training import TrainConfig

DATA_ROOT_ENV = "GOPHORMER_DATA_ROOT"


@dataclass
class DataConfig:
    path: str = "data/cora"
    split_ratios: tuple[float, ...] = (0.6, 0.2, 0.2)
    split_seed: int = 0
    use_split_file: bool = True

    def resolve(self) -> Path:
        p = Path(self.path)
        root = os.environ.get(DATA_ROOT_ENV)
        if not p.is_absolute() and root and not p.exists():
            p = Path(root) / p
        return p


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    out_dir: str = "runs/default"
    workers: int = 1

    SECTIONS = ("data", "sampler", "model", "train", "inference")

    def set_seed(self, seed: int) -> None:
        self.sampler.master_seed = seed
        self.model.init_seed = seed
        self.train.seed = seed


def _parse_value(raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if hint is bool or hint == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        parts = [p for p in raw.replace(",", " ").split() if p]
        return tuple(_parse_value(p, inner) for p in parts)
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if origin is typing.Union:
        for arg in typing.get_args(hint):
            if arg is type(None):
                if raw.lower() in ("none", ""):
                    return None
                continue
            try:
                return _parse_value(raw, arg)
            except ValueError:
                pass
        raise ValueError(f"cannot parse {raw!r} as {hint}")
    return raw


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def fields_of(cfg: RunConfig):
    """Yield ``(key, section_obj, field_name, type_hint)`` for every leaf setting."""
    for name, hint in _hints(RunConfig).items():
        if name == "SECTIONS":
            continue
        value = getattr(cfg, name)
        if dataclasses.is_dataclass(value):
            for f, h in _hints(type(value)).items():
                yield f"{name}.{f}", value, f, h
        else:
            yield name, cfg, name, hint


def apply_override(cfg: RunConfig, key: str, raw: str) -> None:
    for k, obj, f, hint in fields_of(cfg):
        if k == key:
            setattr(obj, f, _parse_value(raw, hint))
            return
    raise KeyError(f"unknown config key {key!r}")


def validate(cfg: RunConfig) -> None:
    """Re-run every section's checks after overrides."""
    for name in RunConfig.SECTIONS:
        sec = getattr(cfg, name)
        post = getattr(sec, "__post_init__", None)
        if post:
            post()
    if cfg.train.batch_size < cfg.sampler.samples_per_node:
        raise ValueError("train.batch_size must be >= sampler.samples_per_node")


def dumps(cfg: RunConfig) -> str:
    lines = ["# gophormer run config"]
    for key, obj, f, _ in fields_of(cfg):
        lines.append(f"{key} = {_format_value(getattr(obj, f))}")
    return "\n".join(lines) + "\n"


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, raw = body.split("=", 1)
        try:
            apply_override(cfg, key.strip(), raw)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"config line {lineno}: {exc}") from None
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def save(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path
