"""Total training loss for the four ablation modes."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

MODES = ("transwcd", "transwcd_d", "transwcd_l", "transwcd_dl")


def uses_dp(mode: str) -> bool:
    return check_mode(mode).endswith(("_d", "_dl"))


def uses_lg(mode: str) -> bool:
    return check_mode(mode).endswith(("_l", "_dl"))


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    return mode


def active_parts(mode: str) -> tuple[str, ...]:
    """Loss parts that contribute in ``mode``, in composition order."""
    parts = ["l_cc"]
    if uses_dp(mode):
        parts.append("l_cp")
    if uses_lg(mode):
        parts.append("l_lg")
    return tuple(parts)


@dataclass
class LossParts:
    l_cc: object
    l_cp: object = None
    l_lg: object = None
    epsilon_cp: float = 0.1
    iteration: int = 0
    dp_start: int = 2000

    def __post_init__(self):
        if self.epsilon_cp < 0:
            raise ConfigError("epsilon_cp must be non-negative")

    @property
    def cp_weight(self) -> float:
        return self.epsilon_cp if self.iteration >= self.dp_start else 0.0


def total_loss(parts: LossParts, mode: str):
    """Compose the objective.  Works on floats and on tensors alike."""
    check_mode(mode)
    if uses_dp(mode) and parts.l_cp is None:
        raise ConfigError(f"mode {mode} needs l_cp")
    if uses_lg(mode) and parts.l_lg is None:
        raise ConfigError(f"mode {mode} needs l_lg")
    loss = parts.l_cc
    if uses_dp(mode) and parts.iteration >= parts.dp_start:
        loss = loss + parts.epsilon_cp * parts.l_cp
    if uses_lg(mode):
        loss = loss + parts.l_lg
    return loss
