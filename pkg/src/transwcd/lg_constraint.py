"""Label Gated penalty on a wrongly predicted change status.

A changed pair with no predicted changed pixel (change missing) and an
unchanged pair with some predicted changed pixel (change fabricating) each
cost ``alpha``; a correctly predicted status costs nothing.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ShapeMismatch

MODES = ("literal", "smooth")
MASK_SOURCES = ("init", "final")


@dataclass(frozen=True)
class LGConfig:
    alpha: float = 0.2
    mode: str = "literal"
    mask_source: str = "final"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown LG mode {self.mode!r}")
        if self.mask_source not in MASK_SOURCES:
            raise ConfigError(f"unknown LG mask source {self.mask_source!r}")


@dataclass
class ChangedMask:
    m_c: torch.Tensor
    presence: torch.Tensor  # bool, one entry per sample


def changed_mask(pred: torch.Tensor, feat: torch.Tensor) -> ChangedMask:
    """Gate ``feat`` (N, C, h, w) by a binary prediction (N, H, W).

    ``pred`` is resampled to (h, w) with nearest neighbour.  Presence is read
    from the full-resolution prediction's changed-pixel count, never from a
    feature sum, so signed features cannot cancel it out.
    """
    if pred.dim() == 2:
        pred = pred[None]
    if feat.dim() == 3:
        feat = feat[None]
    if pred.shape[0] != feat.shape[0]:
        raise ShapeMismatch(f"batch sizes differ: {pred.shape[0]} vs {feat.shape[0]}")
    small = F.interpolate(pred[:, None].to(feat.dtype), size=feat.shape[-2:], mode="nearest")
    if small.shape[-2:] != feat.shape[-2:]:
        raise ShapeMismatch("mask resampling failed")
    m_c = feat * small
    presence = pred.flatten(1).count_nonzero(dim=1) > 0
    return ChangedMask(m_c, presence)


def penalty_terms(labels: torch.Tensor, presence: torch.Tensor, alpha: float) -> torch.Tensor:
    """Per-sample literal penalty: alpha if presence disagrees with the label."""
    labels = labels.reshape(-1).to(torch.float64)
    missing = (~presence).to(torch.float64)            # delta[sum M_c = 0]
    l_c = alpha * missing
    l_uc = alpha * (1.0 - missing)
    return labels * l_c + (1.0 - labels) * l_uc


def smooth_terms(labels: torch.Tensor, p_dp: torch.Tensor, alpha: float) -> torch.Tensor:
    """Differentiable surrogate: soft presence m = max pixel probability."""
    m = torch.sigmoid(p_dp.flatten(1)).amax(dim=1)
    labels = labels.reshape(-1).to(m.dtype)
    return labels * alpha * (1.0 - m) + (1.0 - labels) * alpha * m


def penalty(labels, mask: ChangedMask, cfg: LGConfig, p_dp: torch.Tensor | None = None) -> torch.Tensor:
    """Batch mean of the LG penalty.

    Literal mode returns a constant (no gradient path).  Smooth mode needs
    ``p_dp`` logits of shape (N, H, W).
    """
    labels = torch.as_tensor(labels).reshape(-1)
    if cfg.mode == "literal":
        terms = penalty_terms(labels, mask.presence.reshape(-1), cfg.alpha)
        dtype = p_dp.dtype if p_dp is not None else torch.float64
        return terms.mean().to(dtype)
    if p_dp is None:
        raise ConfigError("smooth LG mode needs pixel logits")
    return smooth_terms(labels, p_dp, cfg.alpha).mean()
