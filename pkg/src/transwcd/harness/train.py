"""Training loop, evaluation driver and alpha sweep."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .. import metrics as M
from ..cam_head import loss_cc, predict_initial
from ..data import (SynthSpec, augment, generate_synthetic, load_pair_dataset, to_tensors)
from ..dp_decoder import gated_targets, loss_cp, predict_final
from ..errors import ConfigError, LabelError, MissingGT
from ..lg_constraint import LGConfig, changed_mask, penalty
from ..model import TransWCD
from ..objective import LossParts, check_mode, total_loss, uses_dp, uses_lg
from . import checkpoint as ckpt_io
from . import config as C
from .schedule import lr_at

log = logging.getLogger(__name__)

NO_LG_COUNTERPART = {"transwcd_l": "transwcd", "transwcd_dl": "transwcd_d"}


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    logs: list[dict]
    evals: list[dict]
    model: TransWCD


# --------------------------------------------------------------------------
# data plumbing

def synth_spec(data: dict, seed_offset: int = 0, num: int | None = None) -> SynthSpec:
    return SynthSpec(
        num_pairs=num or data["num_pairs"],
        size=data["size"],
        changed_ratio=data["changed_ratio"],
        seed=data["seed"] + seed_offset,
        max_objects=data["max_objects"],
    )


def train_pairs(run: C.RunConfig) -> list:
    d = run.data
    if d["root"]:
        return list(load_pair_dataset(d["root"], d["split"]))
    return generate_synthetic(synth_spec(d))


def eval_pairs(run: C.RunConfig) -> list:
    d = run.data
    if d["root"]:
        try:
            return list(load_pair_dataset(d["root"], d["eval_split"]))
        except (FileNotFoundError, LabelError, OSError):
            return []
    return generate_synthetic(synth_spec(d, seed_offset=1, num=d["eval_pairs"]))


# --------------------------------------------------------------------------
# training

def build_model(run: C.RunConfig, seed: int) -> TransWCD:
    torch.manual_seed(seed)
    model = TransWCD(run.model)
    if run.train.init:
        with np.load(run.train.init, allow_pickle=False) as z:
            ckpt_io.load_params(model, {k.removeprefix("param/"): z[k] for k in z.files}, strict=False)
    return model


def _batch(pairs, idx, size, it, seed, use_aug):
    chosen = [pairs[i] for i in idx]
    if use_aug:
        chosen = [augment(p, np.random.default_rng([seed, 2, it, k]), size) for k, p in enumerate(chosen)]
    return to_tensors(chosen)


def _lg_mask_inputs(model, out, pre, post, lg: LGConfig):
    """Binary prediction, feature map and soft logits used by the LG penalty."""
    if lg.mask_source == "final":
        p_dp = out["p_dp"]
        return predict_final(p_dp.detach()), out["feat_dp"], p_dp
    with torch.no_grad():
        was_training = model.training
        model.eval()
        cam = model.multiscale_cam(pre, post)
        model.train(was_training)
    pred = predict_initial(cam, model.cfg.tau)
    soft = F.interpolate(out["raw_cam"], size=pre.shape[-2:], mode="bilinear", align_corners=False)[:, 0]
    return pred, out["feat_d4"], soft


def train_step(model, optimizer, pre, post, labels, it, run: C.RunConfig) -> dict:
    """One optimization step; returns the log record."""
    mode = run.model.mode
    tc = run.train
    lrs = {g: lr_at(it, g, tc) for g in ("backbone", "head")}
    for group in optimizer.param_groups:
        group["lr"] = lrs[group["name"]]
    model.train()
    out = model(pre, post, with_dp=False)
    rec = {"iteration": it, "lr_backbone": lrs["backbone"], "lr_head": lrs["head"]}
    l_cc = loss_cc(out["p_cls"], labels)
    parts = LossParts(l_cc=l_cc, epsilon_cp=run.epsilon_cp, iteration=it, dp_start=tc.dp_start)

    if uses_dp(mode):
        size = pre.shape[-2:]
        if it >= tc.dp_start:
            out["feat_dp"], out["p_dp"] = model.dp(out["feat_d4"], size)
            changed = labels > 0.5
            pred_init = torch.zeros(pre.shape[0], *size, dtype=torch.uint8)
            if changed.any():
                with torch.no_grad():
                    model.eval()
                    cam = model.multiscale_cam(pre[changed], post[changed])
                    model.train()
                pred_init[changed] = predict_initial(cam, run.model.tau)
            target = gated_targets(labels, pred_init.to(pre.dtype))
            parts.l_cp = loss_cp(out["p_dp"], target)
            rec["l_cp"] = parts.l_cp.item()
        else:
            # DP parameters must not move before dp_start: no graph through them
            with torch.no_grad():
                out["feat_dp"], out["p_dp"] = model.dp(out["feat_d4"], size)
            parts.l_cp = torch.zeros((), dtype=pre.dtype)
            rec["l_cp"] = None
        rec["cp_weight"] = parts.cp_weight

    if uses_lg(mode):
        pred, feat, soft = _lg_mask_inputs(model, out, pre, post, run.lg)
        mask = changed_mask(pred, feat)
        parts.l_lg = penalty(labels, mask, run.lg, soft)
        rec["l_lg"] = parts.l_lg.item()

    loss = total_loss(parts, mode)
    rec["l_cc"] = l_cc.item()
    rec["l_total"] = loss.item()
    if not math.isfinite(rec["l_total"]):
        raise FloatingPointError(f"non-finite loss at iteration {it}: {rec}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return rec


def make_optimizer(model: TransWCD, run: C.RunConfig) -> torch.optim.AdamW:
    groups = model.param_groups()
    return torch.optim.AdamW(
        [
            {"params": [p for _, p in groups["backbone"]], "name": "backbone"},
            {"params": [p for _, p in groups["head"]], "name": "head"},
        ],
        lr=run.train.base_lr,
        betas=run.train.betas,
        weight_decay=run.train.weight_decay,
    )


def train(run: C.RunConfig, pairs=None, val_pairs=None, out_dir=None, progress=None) -> TrainResult:
    """Train from scratch; writes config, logs and checkpoint when ``out_dir`` is set."""
    tc = run.train
    if pairs is None:
        pairs = train_pairs(run)
    if not pairs:
        raise ConfigError("training set is empty")
    if any(p.y_cls not in (0, 1) for p in pairs):
        raise LabelError("every training pair needs an image-level label")
    model = build_model(run, tc.seed)
    optimizer = make_optimizer(model, run)
    size = run.data["size"]
    sampler = np.random.default_rng([tc.seed, 1])
    order: list[int] = []
    logs, evals = [], []

    out = Path(out_dir) if out_dir else None
    log_fh = None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        C.write(run.raw, out / "config.ini")
        log_fh = open(out / "log.jsonl", "w")
    try:
        for it in range(tc.max_iterations):
            idx = []
            while len(idx) < tc.batch_size:
                if not order:
                    order = list(sampler.permutation(len(pairs)))
                idx.append(int(order.pop()))
            pre, post, labels, _ = _batch(pairs, idx, size, it, tc.seed, tc.augment)
            rec = train_step(model, optimizer, pre, post, labels, it, run)
            if it % tc.log_interval == 0 or it == tc.max_iterations - 1:
                logs.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec) + "\n")
            if progress:
                progress(rec)
            if val_pairs and (it + 1) % tc.eval_interval == 0:
                model.eval()
                rep = evaluate_model(model, val_pairs, "final" if model.dp is not None else "initial")
                rep["iteration"] = it + 1
                evals.append(rep)
                if log_fh:
                    log_fh.write(json.dumps({"iteration": it + 1, "eval": rep}) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    ck = ckpt_io.from_training(model, optimizer, run.raw, tc.max_iterations,
                               {"sampler": sampler.bit_generator.state})
    if out:
        ck.save(out / "checkpoint.npz")
    return TrainResult(ck, logs, evals, model)


# --------------------------------------------------------------------------
# evaluation

def model_from_checkpoint(ck: ckpt_io.Checkpoint) -> TransWCD:
    run = C.resolve(ck.config)
    model = TransWCD(run.model)
    ckpt_io.load_params(model, ck.params)
    model.eval()
    return model


def _groups(pairs, batch_size):
    group = []
    for p in pairs:
        if group and (p.pre.shape != group[0].pre.shape or len(group) == batch_size):
            yield group
            group = []
        group.append(p)
    if group:
        yield group


def evaluate_model(model: TransWCD, pairs, which: str = "final", batch_size: int = 8) -> dict:
    if which not in ("initial", "final"):
        raise ConfigError(f"which must be 'initial' or 'final', got {which!r}")
    if which == "final" and model.dp is None:
        raise ConfigError("final predictions need a model with the DP decoder")
    counts = M.ConfusionCounts()
    correct = labelled = n = 0
    model.eval()
    for group in _groups(pairs, batch_size):
        if any(p.gt is None for p in group):
            raise MissingGT(f"pair {next(p.id for p in group if p.gt is None)} has no ground truth")
        pre, post, labels, gt = to_tensors(group)
        res = model.predict(pre, post)
        pred = res["pred_final" if which == "final" else "pred_init"]
        counts = M.accumulate(pred, gt, counts)
        has = labels >= 0
        correct += int(((res["p_cls"] >= 0).to(labels.dtype) == labels)[has].sum())
        labelled += int(has.sum())
        n += len(group)
    report = M.finalize(counts)
    report.update(counts=M.counts_dict(counts), accuracy=correct / labelled if labelled else None,
                  which=which, pairs=n)
    return report


def evaluate(ck: ckpt_io.Checkpoint, pairs, which: str = "final") -> dict:
    return evaluate_model(model_from_checkpoint(ck), list(pairs), which)


# --------------------------------------------------------------------------
# alpha sweep

SWEEP_FIELDS = ("alpha", "f1", "precision", "recall", "oa", "iou")


def sweep_alpha(run: C.RunConfig, alphas, pairs=None, val_pairs=None, out_dir=None,
                which: str | None = None) -> tuple[str, list[dict]]:
    """Train and evaluate once per alpha under the shared seed; return CSV text and rows."""
    if not uses_lg(run.model.mode):
        raise ConfigError(f"mode {run.model.mode} has no LG constraint to sweep")
    alphas = sorted(float(a) for a in alphas)
    if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ConfigError(f"alphas must lie in [0, 1], got {alphas}")
    pairs = pairs if pairs is not None else train_pairs(run)
    val_pairs = val_pairs if val_pairs is not None else (eval_pairs(run) or pairs)
    which = which or ("final" if uses_dp(run.model.mode) else "initial")
    rows = []
    for a in alphas:
        sub = C.resolve(run.raw, {"lg.alpha": repr(a)})
        sub_out = Path(out_dir) / f"alpha_{a:g}" if out_dir else None
        res = train(sub, pairs, out_dir=sub_out)
        rep = evaluate_model(res.model, val_pairs, which)
        rows.append({"alpha": a, **{k: rep[k] for k in SWEEP_FIELDS[1:]}})
    return rows_to_csv(rows), rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow([repr(float(r[k])) for k in SWEEP_FIELDS])
    return buf.getvalue()
