"""Confusion-matrix segmentation metrics (IoU, mIoU, mAcc, aAcc).

Counting is exact integer arithmetic; floats appear only in the final
ratios. A class with no ground-truth and no predicted pixels has an
undefined IoU and is left out of the means, as is a class with no
ground-truth pixels for mAcc.
"""
from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np

from .exceptions import DataError

IGNORE_LABEL = 255


class ConfusionMatrix:
    """``counts[g, p]`` = number of pixels with ground truth g predicted as p."""

    def __init__(self, n_classes: int, ignore: int = IGNORE_LABEL):
        if n_classes < 1:
            raise ValueError(f"n_classes must be positive, got {n_classes}")
        self.n_classes = n_classes
        self.ignore = ignore
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise DataError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
        keep = gt != self.ignore
        p, g = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
        for name, arr in (("prediction", p), ("ground truth", g)):
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_classes):
                bad = arr[(arr < 0) | (arr >= self.n_classes)][0]
                raise DataError(f"{name} label {bad} outside [0, {self.n_classes})")
        k = self.n_classes
        self.counts += np.bincount(g * k + p, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise DataError("cannot merge confusion matrices of different sizes")
        out = ConfusionMatrix(self.n_classes, self.ignore)
        out.counts = self.counts + other.counts
        return out

    def __add__(self, other):
        return self.merge(other)

    # per-class integer tallies
    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    def gt_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def pred_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def _ratios(num, den) -> list[Fraction | None]:
    return [Fraction(int(n), int(d)) if d else None for n, d in zip(num, den)]


def _mean(ratios) -> float:
    """Exact mean of the defined ratios, rounded once to float."""
    vals = [r for r in ratios if r is not None]
    return float(sum(vals, Fraction(0)) / len(vals)) if vals else float("nan")


def _iou_ratios(cm: ConfusionMatrix):
    tp, gt, pr = cm.true_positives(), cm.gt_counts(), cm.pred_counts()
    return _ratios(tp, gt + pr - tp)


def iou(cm: ConfusionMatrix) -> list[float]:
    """Per-class TP / (TP + FP + FN); NaN where the union is empty."""
    return [float("nan") if r is None else float(r) for r in _iou_ratios(cm)]


def class_accuracy(cm: ConfusionMatrix) -> list[float]:
    """Per-class recall; NaN for classes absent from the ground truth."""
    return [float("nan") if r is None else float(r)
            for r in _ratios(cm.true_positives(), cm.gt_counts())]


def miou(cm: ConfusionMatrix) -> float:
    return _mean(_iou_ratios(cm))


def macc(cm: ConfusionMatrix) -> float:
    return _mean(_ratios(cm.true_positives(), cm.gt_counts()))


def aacc(cm: ConfusionMatrix) -> float:
    total = cm.total
    return int(cm.true_positives().sum()) / total if total else float("nan")


def confusion(pred, gt, n_classes: int, ignore: int = IGNORE_LABEL) -> ConfusionMatrix:
    return ConfusionMatrix(n_classes, ignore).accumulate(pred, gt)


def _json_float(v: float):
    return None if math.isnan(v) else v


def report(cm: ConfusionMatrix, class_names=None) -> dict:
    names = list(class_names) if class_names is not None else [str(i) for i in range(cm.n_classes)]
    return {
        "classes": names,
        "per_class_iou": [_json_float(v) for v in iou(cm)],
        "miou": _json_float(miou(cm)),
        "macc": _json_float(macc(cm)),
        "aacc": _json_float(aacc(cm)),
        "pixel_counts": [int(v) for v in cm.gt_counts()],
    }


def format_table(rep: dict) -> str:
    width = max([len(n) for n in rep["classes"]] + [5])
    lines = [f"{'class':<{width}}  {'IoU':>8}  {'pixels':>10}"]
    for name, v, n in zip(rep["classes"], rep["per_class_iou"], rep["pixel_counts"]):
        cell = "     n/a" if v is None else f"{v:8.4f}"
        lines.append(f"{name:<{width}}  {cell}  {n:>10d}")
    for key in ("miou", "macc", "aacc"):
        v = rep[key]
        lines.append(f"{key:<{width}}  {'     n/a' if v is None else f'{v:8.4f}'}")
    return "\n".join(lines)


def dumps_report(rep: dict) -> str:
    return json.dumps(rep, indent=2)
