"""
Model and training configuration.

Configuration is looked up in this order:

1. An explicitly provided JSON file path
2. The ``YORO_CONFIG`` environment variable
3. Built-in defaults (the desk-scale toy model)

A config file holds two optional sections::

    {"model": {"d": 64, "depth": 4, ...}, "train": {"epochs": 20, ...}}
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from yoro._errors import ConfigError
from yoro.geometry import PatchGrid

VARIANTS = ("full", "no_det", "no_cls")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters and loss weights.

    m_max, q, tau, lambda1 and lambda2 default to the full-size settings; the
    width and depth defaults are the desk-scale toy model (full size uses
    depth=12).
    """

    d: int = 64
    depth: int = 4
    heads: int = 4
    m_max: int = 40
    vocab_size: int = 64
    image_height: int = 64
    image_width: int = 64
    patch: int = 8
    q: int = 5
    ffn_mult: int = 4
    d_align: int = 64
    tau: float = 0.07
    lambda1: float = 2.0
    lambda2: float = 5.0
    dropout: float = 0.0
    init_std: float = 0.02
    box_prior: float = 0.25
    variant: str = "full"
    coverage_mode: str = "coverage"
    coverage_threshold: float = 0.5
    pa_reduction: str = "mean"

    @property
    def n(self) -> int:
        return (self.image_height // self.patch) * (self.image_width // self.patch)

    @property
    def head_width(self) -> int:
        return self.d // self.heads

    @property
    def num_classes(self) -> int:
        return self.m_max + 1

    @property
    def num_det(self) -> int:
        """Detection rows entering the heads (1 for the ``no_det`` variant)."""
        return 1 if self.variant == "no_det" else self.q

    def grid(self) -> PatchGrid:
        return PatchGrid(self.image_height, self.image_width, self.patch)

    def validate(self) -> "ModelConfig":
        if self.d <= 0 or self.heads <= 0 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.patch <= 0 or self.image_height % self.patch or self.image_width % self.patch:
            raise ConfigError(
                f"patch side {self.patch} must divide {self.image_height}x{self.image_width}")
        if self.q < 1 or self.m_max < 1 or self.vocab_size < 2:
            raise ConfigError("q, m_max must be >= 1 and vocab_size >= 2")
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.coverage_mode not in ("coverage", "iou"):
            raise ConfigError("coverage_mode must be 'coverage' or 'iou'")
        if not 0.0 < self.coverage_threshold <= 1.0:
            raise ConfigError("coverage_threshold must be in (0, 1]")
        if not 0.0 < self.box_prior < 1.0:
            raise ConfigError(f"box_prior must be in (0, 1), got {self.box_prior}")
        if self.pa_reduction not in ("mean", "sum"):
            raise ConfigError("pa_reduction must be 'mean' or 'sum'")
        return self

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser, schedule and loss-ablation settings.

    lr and batch_size are tuned for training the toy model from scratch; the
    full-size recipe fine-tunes pretrained weights with lr=1e-4 at batch 128.
    """

    epochs: int = 40
    batch_size: int = 16
    seed: int = 0
    lr: float = 1e-3
    weight_decay: float = 1e-2
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_fraction: float = 0.10
    grad_clip: float = 1.0
    use_oa: bool = True
    use_pa: bool = True
    progress: bool = True

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr < 0.0 or self.weight_decay < 0.0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        return self

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _build(cls, section: Dict[str, Any], source: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys in {source}: {unknown}",
                          source=source, keys=unknown)
    if "betas" in section:
        section = dict(section, betas=tuple(section["betas"]))
    try:
        return cls(**section).validate()
    except TypeError as e:
        raise ConfigError(f"invalid {cls.__name__} in {source}: {e}", source=source) from None


def config_from_dict(data: Dict[str, Any], source: str = "<dict>") -> Config:
    unknown = sorted(set(data) - {"model", "train"})
    if unknown:
        raise ConfigError(f"unknown config sections in {source}: {unknown}", source=source)
    return Config(model=_build(ModelConfig, data.get("model", {}), source),
                  train=_build(TrainConfig, data.get("train", {}), source))


def load_config(path: Optional[str] = None) -> Config:
    """
    Resolve the configuration.

    Parameters
    ----------
    path : str, optional
        Explicit JSON file. If None, ``$YORO_CONFIG`` is tried, then the
        defaults are used.

    Raises
    ------
    ConfigError
        If the chosen file is missing, is not valid JSON, or holds unknown
        or invalid values.
    """
    if path is None:
        path = os.environ.get("YORO_CONFIG") or None
    if path is None:
        return Config()
    file = Path(path)
    if not file.is_file():
        raise ConfigError(f"config file not found: {path}", path=str(path))
    try:
        data = json.loads(file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}", path=str(path)) from None
    return config_from_dict(data, source=str(path))
