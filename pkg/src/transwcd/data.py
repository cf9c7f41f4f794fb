"""Bi-temporal pairs: synthetic generation, directory adapters, augmentation.

On-disk layout (shared by real datasets and the synthetic writer)::

    root/<split>/A/<name>.png       pre-change image, 8-bit RGB
    root/<split>/B/<name>.png       post-change image, 8-bit RGB
    root/<split>/label/<name>.png   pixel ground truth, 8-bit gray (optional)
    root/<split>/labels.txt         "<name> <0|1>" lines (used when label/ is absent)
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigError, LabelError, LayoutError

SPLITS = ("train", "val", "test")
IMG_EXTS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass
class ImagePair:
    pre: np.ndarray            # H x W x 3 float32 in [0, 1]
    post: np.ndarray
    y_cls: int | None
    gt: np.ndarray | None = None   # H x W bool
    id: str = ""


def derive_image_label(gt) -> int:
    """1 iff the ground truth has a changed pixel; 8-bit maps binarize at > 127."""
    gt = np.asarray(gt)
    if gt.dtype == np.uint8:
        return int(bool((gt > 127).any()))
    if gt.dtype == np.bool_:
        return int(bool(gt.any()))
    return int(bool((gt > 0.5).any()))


# --------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SynthSpec:
    num_pairs: int = 128
    size: int = 64
    changed_ratio: float = 0.5
    seed: int = 0
    max_objects: int = 2
    min_extent: float = 0.25
    max_extent: float = 0.5
    distractors: int = 2

    def validate(self) -> "SynthSpec":
        if self.num_pairs <= 0:
            raise ConfigError("num_pairs must be positive")
        if self.size <= 0 or self.size % 32:
            raise ConfigError(f"size must be a positive multiple of 32, got {self.size}")
        if not 0.0 <= self.changed_ratio <= 1.0:
            raise ConfigError("changed_ratio must lie in [0, 1]")
        if self.max_objects <= 0:
            raise ConfigError("max_objects must be positive")
        if not 0 < self.min_extent <= self.max_extent <= 1:
            raise ConfigError("need 0 < min_extent <= max_extent <= 1")
        return self


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(0.2, 0.8, size=(1, 3, 5, 5)).astype(np.float32)
    smooth = F.interpolate(torch.from_numpy(coarse), size=(size, size), mode="bilinear",
                           align_corners=True)[0].permute(1, 2, 0).numpy()
    return smooth + rng.normal(0.0, 0.02, size=smooth.shape).astype(np.float32)


def _rect(rng: np.random.Generator, spec: SynthSpec):
    lo = max(1, int(round(spec.min_extent * spec.size)))
    hi = max(lo, int(round(spec.max_extent * spec.size)))
    h, w = rng.integers(lo, hi + 1, size=2)
    y, x = rng.integers(0, spec.size - h + 1), rng.integers(0, spec.size - w + 1)
    return slice(int(y), int(y + h)), slice(int(x), int(x + w))


def _colour(rng: np.random.Generator, under: np.ndarray) -> np.ndarray:
    ref = under.reshape(-1, 3).mean(axis=0)
    for _ in range(16):
        c = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
        if np.abs(c - ref).sum() >= 0.6:
            break
    return c


def synth_pair(spec: SynthSpec, index: int, changed: bool) -> ImagePair:
    """One synthetic pair; a pure function of (spec, index, changed)."""
    rng = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, index])
    pre = _background(rng, spec.size)
    for _ in range(int(rng.integers(0, spec.distractors + 1))):
        ys, xs = _rect(rng, spec)
        pre[ys, xs] = _colour(rng, pre[ys, xs])
    post = pre.copy()
    gt = np.zeros((spec.size, spec.size), dtype=bool)
    if changed:
        for _ in range(int(rng.integers(1, spec.max_objects + 1))):
            ys, xs = _rect(rng, spec)
            if rng.random() < 0.5:      # object appears
                post[ys, xs] = _colour(rng, post[ys, xs])
            else:                       # object disappears
                pre[ys, xs] = _colour(rng, pre[ys, xs])
            gt[ys, xs] = True
    shift = rng.uniform(-0.05, 0.05)
    noise = rng.uniform(0.0, 0.02)
    post = post + shift + rng.normal(0.0, noise, size=post.shape).astype(np.float32)
    return ImagePair(
        pre=np.clip(pre, 0, 1).astype(np.float32),
        post=np.clip(post, 0, 1).astype(np.float32),
        y_cls=int(changed),
        gt=gt,
        id=f"synth_{index:05d}",
    )


def generate_synthetic(spec: SynthSpec) -> list[ImagePair]:
    spec.validate()
    n_changed = int(round(spec.changed_ratio * spec.num_pairs))
    order = np.random.default_rng([spec.seed & 0xFFFFFFFFFFFFFFFF, 2**31]).permutation(spec.num_pairs)
    changed = np.zeros(spec.num_pairs, dtype=bool)
    changed[order[:n_changed]] = True
    return [synth_pair(spec, i, bool(changed[i])) for i in range(spec.num_pairs)]


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_pair_dataset(pairs, root, split: str) -> Path:
    """Write pairs in the A/B/label layout plus a labels.txt sidecar."""
    base = Path(root) / split
    for sub in ("A", "B", "label"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for p in pairs:
        Image.fromarray(_to_u8(p.pre)).save(base / "A" / f"{p.id}.png")
        Image.fromarray(_to_u8(p.post)).save(base / "B" / f"{p.id}.png")
        if p.gt is not None:
            Image.fromarray(np.where(p.gt, 255, 0).astype(np.uint8)).save(base / "label" / f"{p.id}.png")
        lines.append(f"{p.id} {p.y_cls}")
    (base / "labels.txt").write_text("\n".join(lines) + "\n")
    return base


# --------------------------------------------------------------------------
# directory adapter

def _index(folder: Path) -> dict[str, Path]:
    return {f.stem: f for f in sorted(folder.iterdir()) if f.suffix.lower() in IMG_EXTS}


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def _read_sidecar(path: Path) -> dict[str, int]:
    labels = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            raise LabelError(f"{path}:{ln}: expected '<name> <0|1>'")
        labels[parts[0]] = int(parts[1])
    return labels


def load_pair_dataset(root, split: str) -> Iterator[ImagePair]:
    """Yield pairs of ``root/split`` in lexicographic name order.

    Labels come from ``label/`` when present, otherwise from ``labels.txt``.
    A training split with neither raises :class:`LabelError`; other splits
    yield ``y_cls=None``.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    base = Path(root) / split
    a_dir, b_dir, l_dir = base / "A", base / "B", base / "label"
    if not a_dir.is_dir() or not b_dir.is_dir():
        raise LayoutError(f"{base} needs both A/ and B/ directories")
    a, b = _index(a_dir), _index(b_dir)
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise LayoutError(f"A/ and B/ disagree on {len(missing)} names, e.g. {missing[:3]}")
    labels = None
    gts = None
    if l_dir.is_dir():
        gts = _index(l_dir)
        if not set(a) <= set(gts):
            raise LayoutError(f"label/ lacks {sorted(set(a) - set(gts))[:3]}")
    elif (base / "labels.txt").is_file():
        labels = _read_sidecar(base / "labels.txt")
        if not set(a) <= set(labels):
            raise LabelError(f"labels.txt lacks {sorted(set(a) - set(labels))[:3]}")
    elif split == "train":
        raise LabelError(f"{base} has neither label/ nor labels.txt")
    return _iter_pairs(a, b, gts, labels)


def _iter_pairs(a, b, gts, labels):
    for name in sorted(a):
        pre, post = read_rgb(a[name]), read_rgb(b[name])
        if pre.shape != post.shape:
            raise LayoutError(f"{name}: A and B shapes differ")
        gt, y = None, None
        if gts is not None:
            raw = read_gray(gts[name])
            gt = raw > 127
            y = derive_image_label(raw)
        elif labels is not None:
            y = labels[name]
        yield ImagePair(pre, post, y, gt, name)


# --------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class Draw:
    scale: float
    flip: bool
    u_y: float
    u_x: float


IDENTITY = Draw(1.0, False, 0.0, 0.0)


def draw_transform(rng: np.random.Generator, scale_range=(0.5, 2.0), flip_prob=0.5) -> Draw:
    scale = float(rng.uniform(*scale_range))
    flip = bool(rng.random() < flip_prob)
    u_y, u_x = (float(v) for v in rng.random(2))
    return Draw(scale, flip, u_y, u_x)


def _resize(arr: np.ndarray, size, mode: str) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
    t = t.permute(2, 0, 1)[None] if t.dim() == 3 else t[None, None]
    if mode == "bilinear":
        t = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    else:
        t = F.interpolate(t, size=size, mode="nearest")
    t = t[0]
    return (t.permute(1, 2, 0) if t.shape[0] == 3 and arr.ndim == 3 else t[0]).numpy()


def _pad_amounts(n: int, size: int) -> tuple[int, int]:
    total = max(0, size - n)
    return total // 2, total - total // 2


def apply_transform(pair: ImagePair, draw: Draw, size: int) -> ImagePair:
    """Apply one geometric draw identically to pre, post and gt, then crop to ``size``."""
    h, w = pair.pre.shape[:2]
    sh, sw = max(1, int(round(h * draw.scale))), max(1, int(round(w * draw.scale)))
    arrays = [pair.pre, pair.post]
    if (sh, sw) != (h, w):
        arrays = [_resize(a, (sh, sw), "bilinear") for a in arrays]
        gt = _resize(pair.gt, (sh, sw), "nearest") > 0.5 if pair.gt is not None else None
    else:
        gt = pair.gt
    if draw.flip:
        arrays = [a[:, ::-1] for a in arrays]
        gt = gt[:, ::-1] if gt is not None else None
    py, px = _pad_amounts(sh, size), _pad_amounts(sw, size)
    if any(py) or any(px):
        arrays = [np.pad(a, (py, px, (0, 0)), mode="reflect") for a in arrays]
        gt = np.pad(gt, (py, px), mode="reflect") if gt is not None else None
    ph, pw = arrays[0].shape[:2]
    oy = min(int(draw.u_y * (ph - size + 1)), ph - size)
    ox = min(int(draw.u_x * (pw - size + 1)), pw - size)
    window = (slice(oy, oy + size), slice(ox, ox + size))
    pre, post = (np.clip(a[window], 0.0, 1.0).astype(np.float32) for a in arrays)
    gt = np.ascontiguousarray(gt[window]) if gt is not None else None
    y = derive_image_label(gt) if gt is not None else pair.y_cls
    return replace(pair, pre=np.ascontiguousarray(pre), post=np.ascontiguousarray(post), gt=gt, y_cls=y)


def _keeps_everything(pair: ImagePair, draw: Draw, size: int) -> bool:
    h, w = pair.pre.shape[:2]
    return round(h * draw.scale) <= size and round(w * draw.scale) <= size


def augment(pair: ImagePair, rng: np.random.Generator, size: int | None = None,
            scale_range=(0.5, 2.0), flip_prob=0.5, retries: int = 8) -> ImagePair:
    """Random rescale, horizontal flip and crop, shared by the whole pair.

    With ground truth the image label is re-derived after the transform.
    Without it, a changed pair only accepts draws that discard no content;
    after ``retries`` rejected draws the identity transform is used.
    """
    size = size or pair.pre.shape[0]
    draw = draw_transform(rng, scale_range, flip_prob)
    if pair.gt is None and pair.y_cls == 1:
        tries = 1
        while not _keeps_everything(pair, draw, size):
            if tries >= retries:
                draw = IDENTITY
                break
            draw = draw_transform(rng, scale_range, flip_prob)
            tries += 1
    return apply_transform(pair, draw, size)


def to_tensors(pairs, device="cpu", dtype=torch.float32):
    """Stack pairs into (pre, post, labels, gt-or-None) NCHW tensors."""
    pre = torch.from_numpy(np.stack([p.pre for p in pairs])).permute(0, 3, 1, 2)
    post = torch.from_numpy(np.stack([p.post for p in pairs])).permute(0, 3, 1, 2)
    labels = torch.tensor([p.y_cls if p.y_cls is not None else -1 for p in pairs], dtype=dtype)
    gt = None
    if all(p.gt is not None for p in pairs):
        gt = torch.from_numpy(np.stack([p.gt for p in pairs]))
    return pre.to(device, dtype).contiguous(), post.to(device, dtype).contiguous(), labels.to(device), gt
