"""Run configuration: model sizes, ablation switches, loss weights, optimiser.

Defaults follow the published hyperparameter table. The few values that
are bound to corpus size or hardware are replaced by desk-scale values and
listed in :data:`DESK_OVERRIDES` together with the published value.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 6
    d: int = 512
    heads: int = 8
    d_r: int = 64
    ffn_size: int = 2048

    def validate(self) -> None:
        for k, v in dataclasses.asdict(self).items():
            if v < 1:
                raise ConfigError(f"encoder.{k} must be >= 1")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 6
    d: int = 512
    heads: int = 8
    ffn_size: int = 2048
    node_loss_kind: str = "CE"
    enable_node: bool = True
    enable_edge: bool = True
    enable_integration: bool = True
    share_relation_embeddings: bool = True

    def validate(self) -> None:
        if self.node_loss_kind not in ("CE", "MSE"):
            raise ConfigError("node_loss_kind must be CE or MSE")
        if self.enable_integration and not (self.enable_node or self.enable_edge):
            raise ConfigError("enable_integration requires enable_node or enable_edge")
        if self.d % self.heads:
            raise ConfigError("d must be divisible by heads")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 6
    d: int = 512
    heads: int = 8
    d_r: int = 64
    ffn_size: int = 2048
    d_biaffine: int = 512
    attention_dropout: float = 0.3
    residual_dropout: float = 0.1
    max_path_len: int = 4
    node_loss_kind: str = "CE"
    enable_node: bool = True
    enable_edge: bool = True
    enable_integration: bool = True
    share_relation_embeddings: bool = True

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.layers, self.d, self.heads, self.d_r, self.ffn_size)

    @property
    def decoder(self) -> DecoderConfig:
        return DecoderConfig(
            self.layers,
            self.d,
            self.heads,
            self.ffn_size,
            self.node_loss_kind,
            self.enable_node,
            self.enable_edge,
            self.enable_integration,
            self.share_relation_embeddings,
        )

    @property
    def n_slots(self) -> int:
        """Extra attendable positions in the first decoder layer."""
        if not self.enable_integration:
            return 0
        return 1 + int(self.enable_node) + int(self.enable_edge)

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate()
        if self.d_biaffine < 1 or self.max_path_len < 1:
            raise ConfigError("d_biaffine and max_path_len must be >= 1")
        for name in ("attention_dropout", "residual_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")


@dataclass(frozen=True)
class LossWeights:
    node: float = 0.01
    edge: float = 0.1

    def validate(self) -> None:
        if self.node < 0 or self.edge < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class OptimConfig:
    lr_factor: float = 0.5
    warmup: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 1.0

    def validate(self) -> None:
        if self.warmup < 1 or self.lr_factor <= 0:
            raise ConfigError("warmup and lr_factor must be positive")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_tokens: int = 512
    eval_every: int = 500
    log_every: int = 50
    dev_max_examples: int = 200
    seed: int = 1

    def validate(self) -> None:
        if self.steps < 0 or self.batch_tokens < 1 or self.eval_every < 1 or self.log_every < 1:
            raise ConfigError("train sizes must be positive")


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 5
    len_penalty: float = 0.6
    max_len_extra: int = 10

    def validate(self) -> None:
        if self.beam < 1:
            raise ConfigError("beam must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        for part in (self.model, self.loss, self.optim, self.train, self.decode):
            part.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        return _build(cls, obj, "").validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}: {err}") from err
        return cls.from_dict(obj)

    def replace(self, **overrides: Any) -> "RunConfig":
        """Override dotted keys, e.g. ``replace(**{"model.d": 64})``."""
        obj = self.to_dict()
        for key, value in overrides.items():
            *parents, leaf = key.split(".")
            node = obj
            for p in parents:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return RunConfig.from_dict(obj)


def _build(cls, obj: dict, prefix: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(obj) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in obj.items():
        f = known[name]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, default, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


# published value for every field whose default is desk-scale
DESK_OVERRIDES = {
    "optim.warmup": 16000,
    "train.batch_tokens": 2048,
    "train.steps": 500000,
}

# small model used by the tests, demos and acceptance runs
DESK_MODEL = {
    "model.layers": 2,
    "model.d": 64,
    "model.heads": 4,
    "model.d_r": 16,
    "model.ffn_size": 128,
    "model.d_biaffine": 64,
}


def desk_config(**overrides: Any) -> RunConfig:
    return RunConfig().replace(**{**DESK_MODEL, **overrides})


ABLATIONS = {
    "baseline": dict(enable_node=False, enable_edge=False, enable_integration=False),
    "+node": dict(enable_node=True, enable_edge=False, enable_integration=False),
    "+node (int.)": dict(enable_node=True, enable_edge=False, enable_integration=True),
    "+edge": dict(enable_node=False, enable_edge=True, enable_integration=False),
    "+edge (int.)": dict(enable_node=False, enable_edge=True, enable_integration=True),
    "+both": dict(enable_node=True, enable_edge=True, enable_integration=False),
    "+both (int.)": dict(enable_node=True, enable_edge=True, enable_integration=True),
}


def ablation_config(base: RunConfig, name: str) -> RunConfig:
    try:
        flags = ABLATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation {name!r}; choose from {list(ABLATIONS)}") from None
    return base.replace(**{f"model.{k}": v for k, v in flags.items()})
