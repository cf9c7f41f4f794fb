"""Single-file checkpoint container (numpy ``.npz``, no pickling).

Format ``transwcd-ckpt`` version 1.  Entries:

``__meta__``
    uint8 array holding UTF-8 JSON: ``format``, ``version``, ``iteration``,
    ``config`` (resolved ``section.key -> value`` strings), ``arrays``
    (``name -> {shape, dtype}`` for every other entry) and ``rng`` (numpy
    sampler state).
``param/<name>``
    model parameters, named as in ``model.named_parameters()``.
``optim/<name>/{exp_avg,exp_avg_sq,step}``
    AdamW moments and step count per parameter (absent before first update).
``rng/torch``
    torch CPU generator state (uint8).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import TransWCDError

FORMAT = "transwcd-ckpt"
VERSION = 1


class CheckpointError(TransWCDError, ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict[str, str]
    iteration: int = 0
    optim: dict[str, np.ndarray] = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    torch_rng: np.ndarray | None = None

    def save(self, path) -> Path:
        return save(self, path)


def from_training(model, optimizer, config: dict, iteration: int, rng_state=None) -> Checkpoint:
    params = {n: p.detach().cpu().numpy().copy() for n, p in model.named_parameters()}
    optim = {}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for p, st in optimizer.state.items():
            n = names[id(p)]
            for key, val in st.items():
                optim[f"{n}/{key}"] = torch.as_tensor(val).detach().cpu().numpy().copy()
    return Checkpoint(params, dict(config), iteration, optim, rng_state or {},
                      torch.get_rng_state().numpy().copy())


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    arrays.update({f"optim/{k}": v for k, v in ckpt.optim.items()})
    if ckpt.torch_rng is not None:
        arrays["rng/torch"] = ckpt.torch_rng
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "iteration": int(ckpt.iteration),
        "config": ckpt.config,
        "arrays": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()},
        "rng": ckpt.rng,
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise CheckpointError(f"{path} has no __meta__ entry")
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path} is not a {FORMAT} file")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        params, optim, torch_rng = {}, {}, None
        for key in z.files:
            if key == "__meta__":
                continue
            arr = z[key]
            spec = meta["arrays"].get(key)
            if spec is None or list(arr.shape) != spec["shape"] or str(arr.dtype) != spec["dtype"]:
                raise CheckpointError(f"entry {key} does not match its recorded shape/dtype")
            if key.startswith("param/"):
                params[key[6:]] = arr
            elif key.startswith("optim/"):
                optim[key[6:]] = arr
            elif key == "rng/torch":
                torch_rng = arr
    return Checkpoint(params, meta["config"], meta["iteration"], optim, meta.get("rng", {}), torch_rng)


def load_params(model: torch.nn.Module, params: dict[str, np.ndarray], strict: bool = True) -> None:
    """Copy a ``name -> array`` map into ``model``.

    Also serves as the import hook for externally converted weights
    (``strict=False`` skips names the model does not have).
    """
    own = dict(model.named_parameters())
    if strict:
        missing, extra = set(own) - set(params), set(params) - set(own)
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    with torch.no_grad():
        for name, arr in params.items():
            if name not in own:
                continue
            p = own[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"{name}: shape {arr.shape} vs {tuple(p.shape)}")
            p.copy_(torch.from_numpy(np.asarray(arr)).to(p.dtype))


def load_optimizer(optimizer, model, optim: dict[str, np.ndarray]) -> None:
    named = dict(model.named_parameters())
    per_param: dict[str, dict] = {}
    for key, arr in optim.items():
        name, field_ = key.rsplit("/", 1)
        per_param.setdefault(name, {})[field_] = torch.from_numpy(arr.copy())
    for name, st in per_param.items():
        optimizer.state[named[name]] = st
