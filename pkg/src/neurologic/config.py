"""Run configuration: one JSON or TOML document with every hyperparameter."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datagen import NOISE_SWEEP, WorldSpec


class ConfigError(ValueError):
    """A configuration problem, optionally pinned to a line of the source file."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path:
            where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)
        self.line = line


@dataclass
class ModelConfig:
    event_dim: int = 64
    raw_dim: int = 128
    heads: int = 2
    l0: int = 15
    perceptual: bool = False
    embed_seed: int = 0

    def validate(self):
        if self.event_dim < 1 or self.raw_dim < 1:
            raise ValueError("event_dim and raw_dim must be positive")
        if self.heads < 1 or self.event_dim % self.heads:
            raise ValueError("heads must be >= 1 and divide event_dim")
        if self.l0 < 1:
            raise ValueError("l0 must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 5
    finetune_epochs: int = 2
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    cosine_first_decay: int = 0
    batch_size: int = 32
    alpha: float = 0.2
    reg_reduction: str = "mean"
    update_rules: bool = True
    candidate_annotation: int = 55
    candidate_generated_per_beta: int = 5
    selection: str = "loss"
    update_samples: int = 600
    noise_in_training: bool = False

    def validate(self):
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.reg_reduction not in ("mean", "sum"):
            raise ValueError("reg_reduction must be 'mean' or 'sum'")
        if self.update_samples < 0:
            raise ValueError("update_samples must be >= 0")
        if self.selection not in ("loss", "map"):
            raise ValueError("selection must be 'loss' or 'map'")


@dataclass
class EvalConfig:
    t_l: float = 0.8
    n_events: int = 5000
    mode: str = "fused"
    mr_sweep: list[float] = field(default_factory=lambda: list(NOISE_SWEEP))
    sweep_mode: str = "lr"
    gt_primitives: bool = True
    search_k: list[int] = field(default_factory=lambda: [10, 100, 1000])
    search_include_gt: bool = False

    def validate(self):
        if not 0.5 <= self.t_l < 1:
            raise ValueError("t_l must be in [0.5, 1)")
        for key in ("mode", "sweep_mode"):
            if getattr(self, key) not in ("lr", "fused", "fused+perceptual"):
                raise ValueError(f"{key} must be 'lr', 'fused' or 'fused+perceptual'")
        if any(not 0 <= m <= 1 for m in self.mr_sweep):
            raise ValueError("mr_sweep values must lie in [0, 1]")
        if any(k < 1 for k in self.search_k):
            raise ValueError("search_k values must be >= 1")


@dataclass
class Config:
    seed: int = 0
    world: WorldSpec = field(default_factory=WorldSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "world": self.world.to_dict(), "model": asdict(self.model),
                "train": asdict(self.train), "eval": asdict(self.eval)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "eval": EvalConfig}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf'(^|[\s{{,])"?{re.escape(key)}"?\s*[:=]')
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.search(line):
            return i
    return None


def _build(cls, data: dict, text: str, path: str | None):
    if not isinstance(data, dict):
        raise ConfigError(f"section for {cls.__name__} must be a table/object", path)
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown setting {key!r}", path, _line_of(text, key))
    try:
        obj = cls(**data)
        obj.validate()
    except (TypeError, ValueError) as exc:
        key = next((k for k in data if k in str(exc)), None)
        raise ConfigError(str(exc), path, _line_of(text, key) if key else None) from None
    return obj


def parse_config(text: str, path: str | None = None, fmt: str | None = None) -> Config:
    fmt = fmt or ("toml" if path and path.endswith(".toml") else "json")
    try:
        if fmt == "toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            try:
                raw = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                m = re.search(r"line (\d+)", str(exc))
                raise ConfigError(f"invalid TOML: {exc}", path, int(m.group(1)) if m else None) from None
        else:
            raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be an object/table", path, 1)
    cfg = Config()
    for key, value in raw.items():
        if key == "seed":
            if not isinstance(value, int) or not 0 <= value < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer", path, _line_of(text, key))
            cfg.seed = value
        elif key == "world":
            try:
                cfg.world = WorldSpec.from_dict(value)
                cfg.world.validate()
            except (TypeError, ValueError) as exc:
                bad = next((k for k in value if k in str(exc)), "world")
                raise ConfigError(str(exc), path, _line_of(text, bad)) from None
        elif key in _SECTIONS:
            setattr(cfg, key, _build(_SECTIONS[key], value, text, path))
        else:
            raise ConfigError(f"unknown section {key!r}", path, _line_of(text, key))
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
    return parse_config(text, str(p))
