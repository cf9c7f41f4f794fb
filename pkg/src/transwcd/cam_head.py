"""Image-level change classifier, class activation maps and the initial mask."""
from __future__ import annotations

from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

DEFAULT_SCALES = (0.5, 1.0, 1.5, 2.0)
DEFAULT_TAU = 0.45
EPS_NORM = 1e-5


class ChangeClassifier(nn.Module):
    """Bias-free 1x1 classifier applied before global average pooling.

    Because pooling is a mean and the classifier is linear, the spatial mean
    of the returned CAM equals the logit.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(1, channels, 1, 1))
        nn.init.xavier_uniform_(self.weight)

    def forward(self, feat_d4: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return classify(feat_d4, self.weight)


def classify(feat_d4: torch.Tensor, weight: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(p_cls, raw_cam)`` with shapes ``(N,)`` and ``(N, 1, h, w)``."""
    raw_cam = F.conv2d(feat_d4, weight)
    p_cls = raw_cam.mean(dim=(1, 2, 3))
    return p_cls, raw_cam


def loss_cc(p_cls: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on logits."""
    return F.binary_cross_entropy_with_logits(p_cls, labels.to(p_cls.dtype), reduction="mean")


def scaled_size(size: tuple[int, int], scale: float) -> tuple[int, int]:
    """Rescale ``size`` by ``scale``, snapped to the nearest multiple of 32 (minimum 32)."""
    return tuple(max(32, int(round(s * scale / 32.0)) * 32) for s in size)


def resize(x: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)


def fuse_multiscale(
    pre: torch.Tensor,
    post: torch.Tensor,
    cam_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    scales: Sequence[float] = DEFAULT_SCALES,
    eps_norm: float = EPS_NORM,
) -> torch.Tensor:
    """Multi-scale CAM in [0, 1) at the input resolution, shape ``(N, H, W)``.

    ``cam_fn(pre, post)`` must return the raw CAM ``(N, 1, h, w)`` of a full
    forward pass.  Per-scale maps are summed in ascending scale order.
    """
    if not scales:
        raise ConfigError("scale list is empty")
    if any(s <= 0 for s in scales):
        raise ConfigError(f"scales must be positive, got {list(scales)}")
    size = tuple(pre.shape[-2:])
    total = None
    for s in sorted(scales):
        target = scaled_size(size, s)
        cam = cam_fn(resize(pre, target), resize(post, target))
        cam = resize(cam, size)
        total = cam if total is None else total + cam
    total = total[:, 0].clamp_min(0)
    peak = total.amax(dim=(1, 2), keepdim=True)
    return total / (peak + eps_norm)


def check_tau(tau: float) -> float:
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    return tau


def predict_initial(cam: torch.Tensor, tau: float = DEFAULT_TAU) -> torch.Tensor:
    """Binary initial prediction: 1 where the normalized CAM reaches ``tau``."""
    check_tau(tau)
    return (cam >= tau).to(torch.uint8)
