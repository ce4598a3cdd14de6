"""Confusion-matrix based segmentation metrics."""
from __future__ import annotations

from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from .errors import DataError, DimensionError


class ConfusionMatrix:
    """``counts[g, p]`` = number of pixels with ground truth g predicted as p."""

    def __init__(self, num_classes: int, counts: Optional[np.ndarray] = None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise DimensionError(f"counts shape {self.counts.shape} != ({num_classes}, {num_classes})")

    def update(self, pred, gt, ignore_index: int = 255) -> "ConfusionMatrix":
        return confusion_update(self, pred, gt, ignore_index)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DimensionError("cannot merge confusion matrices with different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())


def _first_bad(mask: np.ndarray, values: np.ndarray, what: str, n: int):
    pos = tuple(int(i) for i in np.argwhere(mask)[0])
    raise DataError(f"{what} label {int(values[pos])} at pixel {pos} is outside [0, {n})")


def confusion_update(cm: ConfusionMatrix, pred, gt, ignore_index: int = 255) -> ConfusionMatrix:
    """Add one image's pixels to ``cm`` in place and return it.

    Pixels whose ground truth equals ``ignore_index`` are skipped.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    n = cm.num_classes
    keep = gt != ignore_index
    bad_gt = keep & ((gt < 0) | (gt >= n))
    if bad_gt.any():
        _first_bad(bad_gt, gt, "ground-truth", n)
    bad_pred = keep & ((pred < 0) | (pred >= n))
    if bad_pred.any():
        _first_bad(bad_pred, pred, "predicted", n)
    flat = gt[keep].astype(np.int64) * n + pred[keep].astype(np.int64)
    cm.counts += np.bincount(flat, minlength=n * n).reshape(n, n)
    return cm


def iou_per_class(cm: ConfusionMatrix) -> List[Optional[float]]:
    """IoU per class; None for classes absent from both prediction and ground truth."""
    c = cm.counts
    inter = np.diag(c).astype(np.float64)
    union = c.sum(axis=0) + c.sum(axis=1) - np.diag(c)
    return [float(i / u) if u > 0 else None for i, u in zip(inter, union)]


def miou(cm: ConfusionMatrix) -> Tuple[float, List[Optional[float]]]:
    if cm.total == 0:
        raise DataError("mIoU is undefined for an empty confusion matrix")
    per_class = iou_per_class(cm)
    c = cm.counts
    union = c.sum(axis=0) + c.sum(axis=1) - np.diag(c)
    # exact rational mean, rounded once, so the result is independent of summation order
    ratios = [Fraction(int(i), int(u)) for i, u in zip(np.diag(c), union) if u > 0]
    return float(sum(ratios) / len(ratios)), per_class


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("pixel accuracy is undefined for an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)
