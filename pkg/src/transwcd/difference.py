"""Bi-temporal fusion: before the encoder (single stream) or after it (dual stream).

Pairs are fused by channel concatenation followed by the variant's
convolution stack.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeMismatch

EARLY_KINDS = ("conv1x1_no_act", "conv1x1_relu", "abs_diff", "two_layer_conv3x3")
LATE_KINDS = ("conv1x1_relu", "conv3x3_relu", "two_layer_conv3x3")
RELU_KINDS = ("conv1x1_relu", "conv3x3_relu", "two_layer_conv3x3")

DEFAULT_EARLY = "conv1x1_no_act"
DEFAULT_LATE = "conv3x3_relu"


def check_variant(placement: str, kind: str) -> None:
    allowed = {"early": EARLY_KINDS, "late": LATE_KINDS}.get(placement)
    if allowed is None:
        raise ConfigError(f"unknown difference placement {placement!r}")
    if kind not in allowed:
        raise ConfigError(f"{kind!r} is not a valid {placement} difference; choose from {allowed}")


def _stack(kind: str, in_ch: int, out_ch: int) -> nn.Module | None:
    if kind == "abs_diff":
        return None
    if kind == "conv1x1_no_act":
        return nn.Conv2d(in_ch, out_ch, 1)
    if kind == "conv1x1_relu":
        return nn.Sequential(nn.Conv2d(in_ch, out_ch, 1), nn.ReLU())
    if kind == "conv3x3_relu":
        return nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU())
    if kind == "two_layer_conv3x3":
        return nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.ReLU(),
        )
    raise ConfigError(f"unknown difference kind {kind!r}")


class Difference(nn.Module):
    """Fuse two same-shaped maps with ``channels`` channels into one.

    ``placement='early'`` works on RGB images (6 -> 3 channels); ``'late'`` on
    the last-stage features of a Siamese encoder.
    """

    def __init__(self, placement: str, kind: str, channels: int):
        super().__init__()
        check_variant(placement, kind)
        self.placement = placement
        self.kind = kind
        self.body = _stack(kind, 2 * channels, channels)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ShapeMismatch(f"pair shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        if self.body is None:
            return (a - b).abs()
        return self.body(torch.cat([a, b], dim=1))


def diff_early(pre, post, module: Difference):
    return module(pre, post)


def diff_late(feat_pre, feat_post, module: Difference):
    return module(feat_pre, feat_post)
