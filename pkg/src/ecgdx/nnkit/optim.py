"""Training configuration, cosine-annealed learning rate, and plain SGD."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..errors import ConfigError, ParameterError, ShapeError
from .models import ModelParams


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 100
    lr0: float = 0.001
    lr_min: float = 0.0
    pixel_drop: tuple[float, float] = (0.8, 0.01)
    rotation: tuple[float, float] = (10.0, 0.5)
    seed: int = 0

    def __post_init__(self):
        self.pixel_drop = tuple(float(v) for v in self.pixel_drop)
        self.rotation = tuple(float(v) for v in self.rotation)
        if len(self.pixel_drop) != 2 or len(self.rotation) != 2:
            raise ConfigError("pixel_drop and rotation are pairs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not all(0.0 <= p <= 1.0 for p in (*self.pixel_drop, self.rotation[1])):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.rotation[0] < 0:
            raise ConfigError("rotation limit must be >= 0")
        if not self.lr0 > self.lr_min >= 0:
            raise ConfigError("need lr0 > lr_min >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pixel_drop"] = list(self.pixel_drop)
        d["rotation"] = list(self.rotation)
        return d


# Batch size, pixel drop (apply prob., per-pixel prob.), rotation (limit deg, apply prob.)
ENSEMBLE_ROWS = (
    {"batch_size": 5, "pixel_drop": (0.8, 0.01), "rotation": (10.0, 0.5)},
    {"batch_size": 16, "pixel_drop": (0.8, 0.01), "rotation": (30.0, 0.5)},
    {"batch_size": 16, "pixel_drop": (1.0, 0.01), "rotation": (30.0, 0.5)},
)


def cosine_lr(t: float, cfg: TrainConfig) -> float:
    if not 0 <= t <= cfg.epochs:
        raise ParameterError(f"epoch {t} outside [0, {cfg.epochs}]")
    if cfg.epochs == 0:
        return cfg.lr0
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + math.cos(math.pi * t / cfg.epochs))


def sgd_step(params: ModelParams, grads, lr: float) -> ModelParams:
    if len(grads) != len(params.tensors):
        raise ShapeError("gradient list does not match parameters")
    new = []
    for p, g in zip(params.tensors, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {p.shape}")
        new.append((p - p.dtype.type(lr) * g.astype(p.dtype, copy=False)).astype(p.dtype, copy=False))
    return ModelParams(dict(params.arch), new)
