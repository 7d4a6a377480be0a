"""Configuration dataclasses and strict JSON loading.

A config file looks like::

    {"model": {"gamma": 0.7, "tnet": {"widths": [8, 16, 32, 64]}, "decomp": {...}},
     "train": {"epochs": 2000, "optimizer": "adam"}}

Unknown keys raise :class:`ConfigError`; missing keys keep their defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DecompParams:
    gamma_t: float = 0.5
    gamma_s: float = 1.5
    patch: int = 3
    eps: float = 1e-3
    t_max: float = 10.0

    def __post_init__(self):
        if self.gamma_t <= 0 or self.gamma_s <= 0:
            raise ConfigError("gamma_t and gamma_s must be positive")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ConfigError("patch must be a positive odd size")
        if self.t_max <= 0:
            raise ConfigError("t_max must be positive")


@dataclass(frozen=True)
class TNetConfig:
    widths: tuple[int, ...] = (8, 16, 32, 64)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    kernels: tuple[int, ...] = (7, 3, 3, 3)
    strides: tuple[int, ...] = (4, 2, 2, 2)
    depth: int = 1
    ffn_ratio: int = 2
    share_features: bool = True

    def __post_init__(self):
        lens = {len(self.widths), len(self.heads), len(self.kernels), len(self.strides)}
        if lens != {4}:
            raise ConfigError("TNet has exactly four encoder stages")
        for w, h in zip(self.widths, self.heads):
            if w % h:
                raise ConfigError(f"stage width {w} is not divisible by {h} heads")
        for k, s in zip(self.kernels, self.strides):
            if k <= s:
                raise ConfigError("patch embedding kernels must exceed their strides")
        if any(s != 2 for s in self.strides[1:]):
            raise ConfigError("stages 2-4 must downsample by 2 to match the decoder")

    @property
    def input_multiple(self) -> int:
        """Image sides must be multiples of this: stages 1-3 divide exactly, stage 4 may round up."""
        return self.strides[0] * self.strides[1] * self.strides[2]

    @property
    def total_stride(self) -> int:
        out = 1
        for s in self.strides:
            out *= s
        return out


@dataclass(frozen=True)
class ModelConfig:
    tnet: TNetConfig = field(default_factory=TNetConfig)
    decomp: DecompParams = field(default_factory=DecompParams)
    gamma: float = 0.7
    dnet_width: int = 4
    fnet_width: int = 4
    use_dnet: bool = True
    quaternion_layers: bool = True

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")

    def hash(self) -> str:
        blob = json.dumps(to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-3
    lr_final: float = 1e-7
    schedule: str = "cosine"
    epochs: int = 200
    stage1_epochs: int = 0
    stage1_halve_every: int = 25
    freeze_epochs: int = 50
    frozen_groups: tuple[str, ...] = ()
    patch: int = 64
    batch_size: int = 2
    seed: int = 0
    optimizer: str = "sgd"
    qssim_loss: bool = True
    l1_weight: float = 0.0
    augment: bool = False

    def __post_init__(self):
        if not self.lr_init > self.lr_final > 0:
            raise ConfigError("need lr_init > lr_final > 0")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.patch < 16:
            raise ConfigError("epochs and batch_size must be >= 1 and patch >= 16")
        if self.freeze_epochs < 0 or self.stage1_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        where = f"{path}.{name}".lstrip(".")
        if name in _NESTED.get(cls, {}):
            kwargs[name] = _build(_NESTED[cls][name], value, where)
            continue
        default = getattr(defaults, name)
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where} must be a list")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where} must be true or false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where} must be an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where} must be a number")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


_NESTED = {
    Config: {"model": ModelConfig, "train": TrainConfig},
    ModelConfig: {"tnet": TNetConfig, "decomp": DecompParams},
}


def from_dict(data: dict, cls=Config):
    return _build(cls, data, "")


def to_dict(obj) -> dict:
    out = dataclasses.asdict(obj)

    def listify(v):
        if isinstance(v, dict):
            return {k: listify(x) for k, x in v.items()}
        if isinstance(v, tuple):
            return list(v)
        return v

    return listify(out)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(data)


def replace(obj, **changes):
    return dataclasses.replace(obj, **changes)
