"""Pixel confusion counts and the five change-detection indicators.

Metrics are micro-averaged: counts are summed over a whole split first.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import EmptyCounts, ShapeMismatch

FIELDS = ("precision", "recall", "f1", "oa", "iou")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_bool(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x) != 0


def accumulate(pred, gt, counts: ConfusionCounts = ConfusionCounts()) -> ConfusionCounts:
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size) - tp - fp - fn
    return counts + ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int, empty: bool) -> float:
    if den == 0:
        return 1.0 if empty else 0.0
    return num / den


def finalize(counts: ConfusionCounts) -> dict[str, float]:
    """Precision, recall, F1, OA and IoU.

    With no positives anywhere (tp = fp = fn = 0) the empty prediction is
    perfect and every ratio reports 1.0; other zero denominators report 0.0.
    """
    if counts.total == 0:
        raise EmptyCounts("no pixels were evaluated")
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    empty = tp == fp == fn == 0
    return {
        "precision": _ratio(tp, tp + fp, empty),
        "recall": _ratio(tp, tp + fn, empty),
        "f1": _ratio(2 * tp, 2 * tp + fp + fn, empty),
        "oa": (tp + tn) / counts.total,
        "iou": _ratio(tp, tp + fp + fn, empty),
    }


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def to_csv_row(split: str, report: dict, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(("split",) + FIELDS)
    w.writerow([split] + [repr(float(report[k])) for k in FIELDS])
    return buf.getvalue()


def counts_dict(counts: ConfusionCounts) -> dict[str, int]:
    return asdict(counts)
