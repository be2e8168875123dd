"""Experiment configuration: one flat TOML table shared by every command."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Union

import tomli
import tomli_w

from .errors import ConfigurationError
from .model.network import ModelConfig, Variant
from .time_encoding import DEFAULT_GRANULARITIES

PathLike = Union[str, os.PathLike]


@dataclass
class ExperimentConfig:
    variant: str = Variant.DICYCLE.value
    # model
    d: int = 16
    max_len: int = 50
    delta_thred: float = 0.6
    strict_mask: bool = False
    granularities: list[str] = field(default_factory=lambda: list(DEFAULT_GRANULARITIES))
    J: int = 2
    kernel_size: int = 3
    include_j0: bool = False
    time_unit_seconds: float = 3600.0
    timezone: str = "UTC"
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    # optimisation
    lr: float = 1e-3
    # multiplier on the Adam step of the relative-time frequencies
    omega_lr_scale: float = 1.0
    batch_size: int = 128
    epochs: int = 10
    patience: int = 2
    valid_fraction: float = 0.1
    seed: int = 0
    # data
    negative_ratio: int = 1
    data_path: str = ""
    synthetic_spec: str = ""
    data_seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        Variant.parse(self.variant)
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise ConfigurationError("batch_size >= 1, epochs >= 0 and patience >= 1 are required")
        if self.lr < 0 or self.omega_lr_scale < 0:
            raise ConfigurationError("lr and omega_lr_scale must be non-negative")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigurationError(f"valid_fraction must lie in [0, 1), got {self.valid_fraction}")
        self.model_config()  # validates model fields

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.d, max_len=self.max_len, delta_thred=self.delta_thred, granularities=tuple(self.granularities),
            J=self.J, kernel_size=self.kernel_size, include_j0=self.include_j0,
            time_unit_seconds=self.time_unit_seconds, timezone=self.timezone, strict_mask=self.strict_mask,
            hidden=tuple(self.hidden),
        )

    def with_overrides(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)


def load_toml(path: PathLike) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def save_toml(path: PathLike, data: dict) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(data, fh)


def load_config(path: PathLike, base_dir: Optional[str] = None) -> ExperimentConfig:
    """Read a config; relative data paths resolve against the config file's directory."""
    cfg = ExperimentConfig.from_dict(load_toml(path))
    base_dir = base_dir or os.path.dirname(os.path.abspath(path))
    for key in ("data_path", "synthetic_spec"):
        value = getattr(cfg, key)
        if value and not os.path.isabs(value):
            setattr(cfg, key, os.path.join(base_dir, value))
    return cfg


def save_config(path: PathLike, cfg: ExperimentConfig) -> None:
    save_toml(path, cfg.to_dict())
