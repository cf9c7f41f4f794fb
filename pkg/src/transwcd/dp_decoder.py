"""Dilated Prior decoder and its label-gated supervision target."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeMismatch

PRIOR_ALL_ZERO = "prior_all_zero"
CAM_PSEUDO_LABEL = "cam_pseudo_label"


@dataclass(frozen=True)
class DilationConfig:
    """Branch layout; rate 0 is the 1x1 branch, rate k > 0 a 3x3 conv with dilation k."""

    rates: tuple[int, ...] = (0, 1, 2, 3)
    branch_channels: int = 16

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates:
            raise ConfigError("dilation rates are empty")
        if any(r < 0 for r in rates):
            raise ConfigError(f"dilation rates must be non-negative, got {rates}")
        if list(rates) != sorted(set(rates)):
            raise ConfigError(f"dilation rates must be ascending and unique, got {rates}")
        if self.branch_channels <= 0:
            raise ConfigError("branch_channels must be positive")


@dataclass
class SupervisionTarget:
    y_pp: torch.Tensor
    source: str


def select_target(y_cls: int, pred_init: torch.Tensor) -> SupervisionTarget:
    """All-unchanged target for unchanged pairs, the CAM pseudo label otherwise."""
    if int(y_cls) == 0:
        return SupervisionTarget(torch.zeros_like(pred_init), PRIOR_ALL_ZERO)
    return SupervisionTarget(pred_init, CAM_PSEUDO_LABEL)


def gated_targets(labels: torch.Tensor, pred_init: torch.Tensor) -> torch.Tensor:
    """Batched :func:`select_target`: ``(N,)`` labels, ``(N, H, W)`` masks."""
    gate = (labels.reshape(-1, 1, 1) != 0).to(pred_init.dtype)
    return pred_init * gate


def _branch(in_ch: int, out_ch: int, rate: int) -> nn.Module:
    if rate == 0:
        conv = nn.Conv2d(in_ch, out_ch, 1)
    else:
        conv = nn.Conv2d(in_ch, out_ch, 3, padding=rate, dilation=rate)
    return nn.Sequential(conv, nn.ReLU())


class DPDecoder(nn.Module):
    def __init__(self, in_channels: int, cfg: DilationConfig = DilationConfig()):
        super().__init__()
        self.cfg = cfg
        self.branches = nn.ModuleList(_branch(in_channels, cfg.branch_channels, r) for r in cfg.rates)
        self.fuse = nn.Conv2d(cfg.branch_channels * len(cfg.rates), 1, 1)

    @property
    def rates(self) -> tuple[int, ...]:
        return self.cfg.rates

    def forward(self, feat_d4: torch.Tensor, out_size) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``feat_dp`` (N, B*C, h, w) and full-resolution logits ``p_dp`` (N, H, W)."""
        feat_dp = torch.cat([b(feat_d4) for b in self.branches], dim=1)
        logits = self.fuse(feat_dp)
        p_dp = F.interpolate(logits, size=tuple(out_size), mode="bilinear", align_corners=False)
        return feat_dp, p_dp[:, 0]


def decode(feat_d4, decoder: DPDecoder, out_size):
    return decoder(feat_d4, out_size)


def loss_cp(p_dp: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Pixel BCE on logits, averaged per image then over the batch."""
    if p_dp.shape != target.shape:
        raise ShapeMismatch(f"logits {tuple(p_dp.shape)} vs target {tuple(target.shape)}")
    return F.binary_cross_entropy_with_logits(p_dp, target.to(p_dp.dtype), reduction="mean")


def predict_final(p_dp: torch.Tensor) -> torch.Tensor:
    # logit 0 counts as changed
    return (p_dp >= 0).to(torch.uint8)
