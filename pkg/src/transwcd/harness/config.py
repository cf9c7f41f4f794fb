"""Sectioned ``key = value`` run configuration.

Files are INI-style::

    [model]
    mode = transwcd_dl
    [train]
    max_iterations = 4000

Every key can also be overridden with ``section.key=value`` strings.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from ..dp_decoder import DilationConfig
from ..encoder import PRESETS, EncoderConfig, validate_config
from ..errors import ConfigError
from ..lg_constraint import LGConfig
from ..model import ModelConfig
from ..objective import check_mode
from .schedule import TrainConfig


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_str(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else s.strip()


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


# key -> (parser, default as text)
SCHEMA: dict[str, tuple] = {
    "model.mode": (str, "transwcd"),
    "model.stream": (str, "single"),
    "model.difference": (_opt_str, "auto"),
    "model.encoder": (str, "tiny"),
    "model.embed_dims": (_ints, ""),
    "model.depths": (_ints, ""),
    "model.heads": (_ints, ""),
    "model.attention_reduction": (_ints, ""),
    "model.mlp_ratio": (_opt_float, "auto"),
    "model.drop_rate": (_opt_float, "auto"),
    "cam.scales": (_floats, "0.5, 1.0, 1.5, 2.0"),
    "cam.tau": (float, "0.45"),
    "cam.eps_norm": (float, "1e-5"),
    "dp.rates": (_ints, "0, 1, 2, 3"),
    "dp.branch_channels": (int, "16"),
    "dp.start_iteration": (int, "2000"),
    "lg.alpha": (_opt_float, "auto"),
    "lg.mode": (str, "literal"),
    "lg.mask_source": (_opt_str, "auto"),
    "loss.epsilon_cp": (float, "0.1"),
    "train.base_lr": (float, "5e-5"),
    "train.head_lr_mult": (float, "10"),
    "train.max_iterations": (int, "30000"),
    "train.warmup_iterations": (int, "1500"),
    "train.poly_power": (float, "0.9"),
    "train.batch_size": (int, "8"),
    "train.seed": (int, "0"),
    "train.eval_interval": (int, "1000"),
    "train.log_interval": (int, "1"),
    "train.weight_decay": (float, "0.01"),
    "train.beta1": (float, "0.9"),
    "train.beta2": (float, "0.999"),
    "train.augment": (_bool, "true"),
    "train.out_dir": (str, "runs/default"),
    "train.init": (_opt_str, "none"),
    "data.root": (_opt_str, "none"),
    "data.split": (str, "train"),
    "data.eval_split": (str, "val"),
    "data.size": (int, "64"),
    "data.num_pairs": (int, "128"),
    "data.eval_pairs": (int, "32"),
    "data.changed_ratio": (float, "0.5"),
    "data.seed": (int, "0"),
    "data.max_objects": (int, "2"),
}


@dataclass
class RunConfig:
    model: ModelConfig
    lg: LGConfig
    train: TrainConfig
    data: dict
    epsilon_cp: float
    raw: dict = field(default_factory=dict)

    def dumps(self) -> str:
        return dumps(self.raw)


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_file(path) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    with open(path) as fh:
        cp.read_file(fh)
    return {f"{s}.{k}": v for s in cp.sections() for k, v in cp[s].items()}


def resolve(values: dict[str, str] | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Merge defaults, file values and overrides into a validated :class:`RunConfig`."""
    raw = {k: d for k, (_, d) in SCHEMA.items()}
    for src in (values or {}), (overrides or {}):
        for k, v in src.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key {k!r}")
            raw[k] = str(v)
    try:
        v = {k: SCHEMA[k][0](s) for k, s in raw.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    mode = check_mode(v["model.mode"])
    if v["model.encoder"] not in PRESETS:
        raise ConfigError(f"unknown encoder preset {v['model.encoder']!r}")
    enc = PRESETS[v["model.encoder"]]
    enc_kw = {}
    for key in ("embed_dims", "depths", "heads", "attention_reduction"):
        if v[f"model.{key}"]:
            enc_kw[key] = v[f"model.{key}"]
    for key in ("mlp_ratio", "drop_rate"):
        if v[f"model.{key}"] is not None:
            enc_kw[key] = v[f"model.{key}"]
    enc = validate_config(EncoderConfig(**{**enc.to_dict(), **enc_kw}))
    model = ModelConfig(
        mode=mode,
        stream=v["model.stream"],
        difference=v["model.difference"],
        encoder=enc,
        dp=DilationConfig(v["dp.rates"], v["dp.branch_channels"]),
        scales=v["cam.scales"],
        tau=v["cam.tau"],
        eps_norm=v["cam.eps_norm"],
    )
    alpha = v["lg.alpha"]
    if alpha is None:
        alpha = 0.2 if mode == "transwcd_dl" else 0.5
    source = v["lg.mask_source"] or ("final" if mode == "transwcd_dl" else "init")
    if source == "final" and mode == "transwcd_l":
        raise ConfigError("lg.mask_source = final needs the DP decoder (mode transwcd_dl)")
    lg = LGConfig(alpha=alpha, mode=v["lg.mode"], mask_source=source)
    train = TrainConfig(
        base_lr=v["train.base_lr"],
        head_lr_mult=v["train.head_lr_mult"],
        max_iterations=v["train.max_iterations"],
        warmup_iterations=v["train.warmup_iterations"],
        poly_power=v["train.poly_power"],
        batch_size=v["train.batch_size"],
        dp_start=v["dp.start_iteration"],
        seed=v["train.seed"],
        eval_interval=v["train.eval_interval"],
        log_interval=v["train.log_interval"],
        weight_decay=v["train.weight_decay"],
        betas=(v["train.beta1"], v["train.beta2"]),
        augment=v["train.augment"],
        out_dir=v["train.out_dir"],
        init=v["train.init"],
    )
    if v["loss.epsilon_cp"] < 0:
        raise ConfigError("loss.epsilon_cp must be non-negative")
    data = {k.split(".", 1)[1]: val for k, val in v.items() if k.startswith("data.")}
    if data["size"] % 32:
        raise ConfigError("data.size must be a multiple of 32")
    # record the resolved values so the written config is self-describing
    raw["lg.alpha"] = repr(float(alpha))
    raw["lg.mask_source"] = source
    raw["model.difference"] = model.difference
    for key in ("embed_dims", "depths", "heads", "attention_reduction"):
        raw[f"model.{key}"] = ", ".join(str(x) for x in getattr(enc, key))
    raw["model.mlp_ratio"] = repr(enc.mlp_ratio)
    raw["model.drop_rate"] = repr(enc.drop_rate)
    return RunConfig(model, lg, train, data, v["loss.epsilon_cp"], raw)


def load(path=None, overrides=None) -> RunConfig:
    values = read_file(path) if path else {}
    if isinstance(overrides, (list, tuple)):
        overrides = parse_overrides(overrides)
    return resolve(values, overrides)


def dumps(raw: dict[str, str]) -> str:
    sections: dict[str, list[str]] = {}
    for k in SCHEMA:
        s, key = k.split(".", 1)
        sections.setdefault(s, []).append(f"{key} = {raw[k]}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


def write(raw: dict[str, str], path) -> None:
    Path(path).write_text(dumps(raw))
