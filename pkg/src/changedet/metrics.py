"""Pixel-level evaluation: confusion counts and the scores derived from them.

Counts are accumulated over a whole split and the scores computed once from
the totals (micro averaging), so images of different sizes weigh by pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Union

import numpy as np
import torch

Array = Union[np.ndarray, torch.Tensor]

METRIC_NAMES = ("precision", "recall", "f1", "iou", "accuracy")


def _as_bool(arr: Array, name: str) -> np.ndarray:
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
    arr = np.asarray(arr)
    uniq = np.unique(arr)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError(f"{name}: expected binary values, found {uniq[:8]}")
    return arr.astype(bool)


@dataclass
class ConfusionCounts:
    """Running TP / TN / FP / FN pixel totals."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def update(self, pred: Array, target: Array) -> "ConfusionCounts":
        p = _as_bool(pred, "pred")
        t = _as_bool(target, "target")
        if p.shape != t.shape:
            raise ValueError(f"pred {p.shape} vs target {t.shape}")
        self.tp += int((p & t).sum())
        self.tn += int((~p & ~t).sum())
        self.fp += int((p & ~t).sum())
        self.fn += int((~p & t).sum())
        return self

    def reset(self):
        self.tp = self.tn = self.fp = self.fn = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    iou: float
    accuracy: float
    counts: ConfusionCounts
    # True when any score's denominator was zero and the score was pinned to 0.
    degenerate: bool = False

    def as_dict(self) -> Dict[str, float]:
        out = {name: getattr(self, name) for name in METRIC_NAMES}
        out.update(tp=self.counts.tp, tn=self.counts.tn,
                   fp=self.counts.fp, fn=self.counts.fn,
                   degenerate=self.degenerate)
        return out


def _ratio(num: float, den: float, state: dict) -> float:
    if den == 0:
        state["degenerate"] = True
        return 0.0
    return num / den


def compute_metrics(counts: ConfusionCounts) -> MetricReport:
    """Precision, recall, f1, intersection-over-union and accuracy from counts.

    Zero denominators (e.g. a split with no positives and no positive
    predictions) yield a 0.0 score and set the degenerate flag rather than
    raising.
    """
    state = {"degenerate": False}
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    precision = _ratio(tp, tp + fp, state)
    recall = _ratio(tp, tp + fn, state)
    f1 = _ratio(2.0 * precision * recall, precision + recall, state)
    iou = _ratio(tp, tp + fp + fn, state)
    accuracy = _ratio(tp + tn, counts.total, state)
    return MetricReport(precision=precision, recall=recall, f1=f1, iou=iou,
                        accuracy=accuracy, counts=counts,
                        degenerate=state["degenerate"])


def evaluate_pair(pred: Array, target: Array) -> MetricReport:
    return compute_metrics(ConfusionCounts().update(pred, target))


def format_report(report: MetricReport) -> str:
    lines = ["metric      value", "-----------------"]
    for name in METRIC_NAMES:
        lines.append(f"{name:<10}  {getattr(report, name):.4f}")
    c = report.counts
    lines.append(f"pixels      {c.total} (tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn})")
    if report.degenerate:
        lines.append("note: a zero-denominator score was pinned to 0")
    return "\n".join(lines)
