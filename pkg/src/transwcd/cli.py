"""Command-line entry point: ``transwcd <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import metrics as M
from .data import SPLITS, SynthSpec, generate_synthetic, load_pair_dataset, read_rgb, write_pair_dataset
from .errors import TransWCDError
from .harness import checkpoint as ckpt_io
from .harness import config as C
from .harness.train import evaluate_model, model_from_checkpoint, sweep_alpha, train

log = logging.getLogger("transwcd")


def cmd_gen_synth(args) -> int:
    splits = [s.strip() for s in args.splits.split(",") if s.strip()]
    for i, split in enumerate(splits):
        if split not in SPLITS:
            raise TransWCDError(f"unknown split {split!r}")
        spec = SynthSpec(num_pairs=args.num, size=args.size, changed_ratio=args.changed_ratio,
                         seed=args.seed + i, max_objects=args.max_objects)
        base = write_pair_dataset(generate_synthetic(spec), args.out, split)
        log.info("wrote %d pairs to %s", args.num, base)
    return 0


def cmd_train(args) -> int:
    run = C.load(args.config, args.set)
    out = Path(args.out or run.train.out_dir)
    every = max(1, run.train.max_iterations // 20)

    def progress(rec):
        if rec["iteration"] % every == 0:
            log.info(json.dumps(rec))

    from .harness.train import eval_pairs
    res = train(run, val_pairs=eval_pairs(run) or None, out_dir=out, progress=progress)
    log.info("checkpoint written to %s", out / "checkpoint.npz")
    if res.evals:
        log.info("last eval: %s", json.dumps(res.evals[-1]))
    return 0


def cmd_eval(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    model = model_from_checkpoint(ck)
    which = args.which or ("final" if model.dp is not None else "initial")
    report = evaluate_model(model, list(load_pair_dataset(args.data, args.split)), which)
    report["split"] = args.split
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(M.to_json(report) + "\n")
    out.with_suffix(".csv").write_text(M.to_csv_row(args.split, report))
    print(M.to_csv_row(args.split, report), end="")
    return 0


def _save_gray(arr: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def cmd_predict(args) -> int:
    model = model_from_checkpoint(ckpt_io.load(args.checkpoint))
    pre = torch.from_numpy(read_rgb(args.pre)).permute(2, 0, 1)[None]
    post = torch.from_numpy(read_rgb(args.post)).permute(2, 0, 1)[None]
    res = model.predict(pre, post)
    which = args.which or ("final" if "pred_final" in res else "initial")
    mask = res["pred_final" if which == "final" else "pred_init"][0].numpy()
    cam = res["cam"][0].numpy()
    _save_gray(np.rint(255.0 * cam), args.out_cam)
    _save_gray(mask * 255, args.out_mask)
    print(json.dumps({"change_logit": float(res["p_cls"][0]), "changed_pixels": int(mask.sum())}))
    return 0


def cmd_sweep_alpha(args) -> int:
    run = C.load(args.config, args.set)
    alphas = [float(a) for a in args.alphas.replace(",", " ").split()]
    out = Path(args.out)
    text, _ = sweep_alpha(run, alphas, out_dir=out.parent / (out.stem + "_runs"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transwcd", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic dataset in the A/B/label layout")
    g.add_argument("--out", required=True)
    g.add_argument("--num", type=int, default=128)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--changed-ratio", type=float, default=0.5)
    g.add_argument("--max-objects", type=int, default=2)
    g.add_argument("--splits", default="train,val,test")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out", help="output directory (default: train.out_dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=SPLITS)
    e.add_argument("--out", default="metrics.json")
    e.add_argument("--which", choices=("initial", "final"))
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a change mask for one image pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pre", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-cam", required=True)
    p.add_argument("--which", choices=("initial", "final"))
    p.set_defaults(func=cmd_predict)

    s = sub.add_parser("sweep-alpha", help="train+eval once per LG weight")
    s.add_argument("--config")
    s.add_argument("--alphas", required=True, help="comma-separated values in [0, 1]")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep_alpha)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (TransWCDError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
