"""Optimization schedule: linear warm-up then polynomial decay, two LR groups."""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError, RangeError

GROUPS = ("backbone", "head")


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 5e-5
    head_lr_mult: float = 10.0
    max_iterations: int = 30000
    warmup_iterations: int = 1500
    poly_power: float = 0.9
    batch_size: int = 8
    dp_start: int = 2000
    seed: int = 0
    eval_interval: int = 1000
    log_interval: int = 1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    augment: bool = True
    out_dir: str = "runs/default"
    init: str | None = None

    def __post_init__(self):
        if self.max_iterations <= 0:
            raise ConfigError("max_iterations must be positive")
        if not 0 <= self.warmup_iterations < self.max_iterations:
            raise ConfigError("need 0 <= warmup_iterations < max_iterations")
        if self.base_lr <= 0 or self.head_lr_mult <= 0 or self.poly_power <= 0:
            raise ConfigError("learning-rate settings must be positive")
        if self.batch_size <= 0 or self.eval_interval <= 0 or self.log_interval <= 0:
            raise ConfigError("batch_size, eval_interval and log_interval must be positive")
        if self.dp_start < 0 or self.weight_decay < 0:
            raise ConfigError("dp_start and weight_decay must be non-negative")


def lr_at(iteration: int, group: str, cfg: TrainConfig) -> float:
    if group not in GROUPS:
        raise ConfigError(f"unknown parameter group {group!r}")
    if not 0 <= iteration <= cfg.max_iterations:
        raise RangeError(f"iteration {iteration} outside [0, {cfg.max_iterations}]")
    if iteration < cfg.warmup_iterations:
        lr = cfg.base_lr * (iteration + 1) / cfg.warmup_iterations
    else:
        frac = (iteration - cfg.warmup_iterations) / (cfg.max_iterations - cfg.warmup_iterations)
        lr = cfg.base_lr * (1.0 - frac) ** cfg.poly_power
    return lr * cfg.head_lr_mult if group == "head" else lr
