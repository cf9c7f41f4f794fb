"""TransWCD / TransWCD-DL network assembly."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from . import cam_head
from .cam_head import ChangeClassifier, fuse_multiscale, predict_initial
from .difference import DEFAULT_EARLY, DEFAULT_LATE, Difference, check_variant
from .dp_decoder import DilationConfig, DPDecoder, predict_final
from .encoder import EncoderConfig, MixVisionEncoder
from .errors import ConfigError
from .objective import check_mode, uses_dp


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "transwcd"
    stream: str = "single"
    difference: str | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dp: DilationConfig = field(default_factory=DilationConfig)
    scales: tuple[float, ...] = cam_head.DEFAULT_SCALES
    tau: float = cam_head.DEFAULT_TAU
    eps_norm: float = cam_head.EPS_NORM

    def __post_init__(self):
        check_mode(self.mode)
        if self.stream not in ("single", "dual"):
            raise ConfigError(f"stream must be 'single' or 'dual', got {self.stream!r}")
        if self.difference is None:
            object.__setattr__(self, "difference", DEFAULT_EARLY if self.stream == "single" else DEFAULT_LATE)
        check_variant(self.placement, self.difference)
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        cam_head.check_tau(self.tau)

    @property
    def placement(self) -> str:
        return "early" if self.stream == "single" else "late"

    def to_dict(self) -> dict:
        return asdict(self)


class TransWCD(nn.Module):
    """Change classifier whose CAMs (and optional DP head) give pixel masks.

    Parameters are split into a ``backbone`` group (the encoder) and a
    ``head`` group (difference, classifier, DP decoder).
    """

    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = MixVisionEncoder(cfg.encoder)
        c4 = cfg.encoder.embed_dims[-1]
        channels = 3 if cfg.stream == "single" else c4
        self.difference = Difference(cfg.placement, cfg.difference, channels)
        self.classifier = ChangeClassifier(c4)
        self.dp = DPDecoder(c4, cfg.dp) if uses_dp(cfg.mode) else None

    def feat_d4(self, pre: torch.Tensor, post: torch.Tensor) -> torch.Tensor:
        if self.cfg.stream == "single":
            return self.encoder(self.difference(pre, post))[-1]
        # Siamese: the very same encoder module sees both dates
        f1 = self.encoder(pre)[-1]
        f2 = self.encoder(post)[-1]
        return self.difference(f1, f2)

    def raw_cam(self, pre, post):
        return self.classifier(self.feat_d4(pre, post))[1]

    def forward(self, pre, post, with_dp: bool = True) -> dict:
        feat = self.feat_d4(pre, post)
        p_cls, raw_cam = self.classifier(feat)
        out = {"feat_d4": feat, "p_cls": p_cls, "raw_cam": raw_cam}
        if with_dp and self.dp is not None:
            out["feat_dp"], out["p_dp"] = self.dp(feat, pre.shape[-2:])
        return out

    def multiscale_cam(self, pre, post, scales=None):
        return fuse_multiscale(pre, post, self.raw_cam, scales or self.cfg.scales, self.cfg.eps_norm)

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups = {"backbone": [], "head": []}
        for name, p in self.named_parameters():
            groups["backbone" if name.startswith("encoder.") else "head"].append((name, p))
        return groups

    @torch.no_grad()
    def predict(self, pre, post) -> dict:
        """Inference: multi-scale CAM, initial mask and (if present) final mask."""
        out = self(pre, post)
        cam = self.multiscale_cam(pre, post)
        res = {"p_cls": out["p_cls"], "cam": cam, "pred_init": predict_initial(cam, self.cfg.tau)}
        if "p_dp" in out:
            res["p_dp"] = out["p_dp"]
            res["pred_final"] = predict_final(out["p_dp"])
        return res
