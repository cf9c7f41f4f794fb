"""Hierarchical four-stage transformer encoder (MiT family).

Each stage is an overlapping patch embedding (strides 4/2/2/2), a stack of
blocks with spatially-reduced self-attention and a Mix-FFN, and a final
LayerNorm.  There is no positional embedding; position leaks in through the
depthwise convolution of the FFN.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DimensionError

__all__ = [
    "EncoderConfig",
    "PRESETS",
    "validate_config",
    "MixVisionEncoder",
    "encode",
]

STAGE_STRIDES = (4, 2, 2, 2)
STAGE_KERNELS = (7, 3, 3, 3)


@dataclass(frozen=True)
class EncoderConfig:
    embed_dims: tuple[int, ...] = (16, 32, 64, 128)
    depths: tuple[int, ...] = (1, 1, 1, 1)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    mlp_ratio: float = 4.0
    attention_reduction: tuple[int, ...] = (8, 4, 2, 1)
    drop_rate: float = 0.0
    bias: bool = True

    def __post_init__(self):
        for name in ("embed_dims", "depths", "heads", "attention_reduction"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "tiny": EncoderConfig(),
    "mit-b1-like": EncoderConfig(
        embed_dims=(64, 128, 320, 512),
        depths=(2, 2, 2, 2),
        heads=(1, 2, 5, 8),
        attention_reduction=(8, 4, 2, 1),
    ),
}


def validate_config(cfg: EncoderConfig, input_size: tuple[int, int] | None = None) -> EncoderConfig:
    """Return ``cfg`` unchanged if it is usable, raise otherwise.

    When ``input_size`` is given, both sides must be multiples of 32.
    """
    fields = (cfg.embed_dims, cfg.depths, cfg.heads, cfg.attention_reduction)
    if any(len(f) != 4 for f in fields):
        raise ConfigError("embed_dims, depths, heads and attention_reduction need 4 entries each")
    if any(v <= 0 for f in fields for v in f):
        raise ConfigError("encoder sizes must be positive integers")
    if any(b < a for a, b in zip(cfg.embed_dims, cfg.embed_dims[1:])):
        raise ConfigError(f"embed_dims must be non-decreasing, got {cfg.embed_dims}")
    for d, h in zip(cfg.embed_dims, cfg.heads):
        if d % h:
            raise ConfigError(f"{h} heads do not divide {d} channels")
    if not cfg.mlp_ratio > 0:
        raise ConfigError("mlp_ratio must be positive")
    if not 0.0 <= cfg.drop_rate < 1.0:
        raise ConfigError("drop_rate must lie in [0, 1)")
    if input_size is not None:
        h, w = input_size
        if h % 32 or w % 32 or h <= 0 or w <= 0:
            raise DimensionError(f"input size {h}x{w} is not divisible by 32")
    return cfg


class OverlapPatchEmbed(nn.Module):
    def __init__(self, in_chans, embed_dim, kernel, stride, bias=True):
        super().__init__()
        self.proj = nn.Conv2d(in_chans, embed_dim, kernel, stride, kernel // 2, bias=bias)
        self.norm = nn.LayerNorm(embed_dim, elementwise_affine=True, bias=bias)

    def forward(self, x):
        x = self.proj(x)
        _, _, h, w = x.shape
        x = x.flatten(2).transpose(1, 2)
        return self.norm(x), h, w


class EfficientAttention(nn.Module):
    """Multi-head attention whose keys/values come from a strided reduction."""

    def __init__(self, dim, heads, reduction, drop=0.0, bias=True):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.q = nn.Linear(dim, dim, bias=bias)
        self.kv = nn.Linear(dim, dim * 2, bias=bias)
        self.proj = nn.Linear(dim, dim, bias=bias)
        self.drop = nn.Dropout(drop)
        self.reduction = reduction
        if reduction > 1:
            self.sr = nn.Conv2d(dim, dim, reduction, reduction, bias=bias)
            self.sr_norm = nn.LayerNorm(dim, bias=bias)

    def forward(self, x, h, w):
        b, n, c = x.shape
        q = self.q(x).reshape(b, n, self.heads, c // self.heads).transpose(1, 2)
        if self.reduction > 1:
            x_ = x.transpose(1, 2).reshape(b, c, h, w)
            x_ = self.sr(x_).flatten(2).transpose(1, 2)
            x_ = self.sr_norm(x_)
        else:
            x_ = x
        kv = self.kv(x_).reshape(b, -1, 2, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = self.drop(attn.softmax(dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.drop(self.proj(out))


class MixFFN(nn.Module):
    def __init__(self, dim, hidden, drop=0.0, bias=True):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden, bias=bias)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, 1, 1, groups=hidden, bias=bias)
        self.fc2 = nn.Linear(hidden, dim, bias=bias)
        self.drop = nn.Dropout(drop)

    def forward(self, x, h, w):
        x = self.fc1(x)
        b, n, c = x.shape
        x = self.dwconv(x.transpose(1, 2).reshape(b, c, h, w)).flatten(2).transpose(1, 2)
        x = self.drop(F.gelu(x))
        return self.drop(self.fc2(x))


class Block(nn.Module):
    def __init__(self, dim, heads, mlp_ratio, reduction, drop=0.0, bias=True):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, bias=bias)
        self.attn = EfficientAttention(dim, heads, reduction, drop, bias)
        self.norm2 = nn.LayerNorm(dim, bias=bias)
        self.mlp = MixFFN(dim, int(dim * mlp_ratio), drop, bias)

    def forward(self, x, h, w):
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.mlp(self.norm2(x), h, w)


class MixVisionEncoder(nn.Module):
    """Four-stage encoder; ``forward`` returns the feature pyramid as NCHW maps."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), in_chans: int = 3):
        super().__init__()
        self.cfg = validate_config(cfg)
        self.patch_embeds = nn.ModuleList()
        self.stages = nn.ModuleList()
        self.norms = nn.ModuleList()
        prev = in_chans
        for i in range(4):
            dim = cfg.embed_dims[i]
            self.patch_embeds.append(
                OverlapPatchEmbed(prev, dim, STAGE_KERNELS[i], STAGE_STRIDES[i], cfg.bias)
            )
            self.stages.append(nn.ModuleList(
                Block(dim, cfg.heads[i], cfg.mlp_ratio, cfg.attention_reduction[i], cfg.drop_rate, cfg.bias)
                for _ in range(cfg.depths[i])
            ))
            self.norms.append(nn.LayerNorm(dim, bias=cfg.bias))
            prev = dim
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.dim() != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected an N x 3 x H x W batch, got {tuple(x.shape)}")
        if x.shape[-2] % 32 or x.shape[-1] % 32:
            raise DimensionError(f"input size {x.shape[-2]}x{x.shape[-1]} is not divisible by 32")
        b = x.shape[0]
        pyramid = []
        for embed, blocks, norm in zip(self.patch_embeds, self.stages, self.norms):
            x, h, w = embed(x)
            for blk in blocks:
                x = blk(x, h, w)
            x = norm(x)
            x = x.transpose(1, 2).reshape(b, -1, h, w)
            pyramid.append(x)
        return pyramid


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        if m.weight is not None:
            nn.init.ones_(m.weight)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.Conv2d):
        fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
        nn.init.normal_(m.weight, 0.0, math.sqrt(2.0 / fan_out))
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def encode(x: torch.Tensor, encoder: MixVisionEncoder) -> list[torch.Tensor]:
    """Run ``encoder`` on an NCHW batch and return its four stage maps."""
    return encoder(x)
