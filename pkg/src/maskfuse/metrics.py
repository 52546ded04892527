"""Confusion-matrix accumulation and IoU / F1 segmentation metrics.

Metrics aggregate over one dataset-level confusion matrix (never per-image
means).  Classes absent from both prediction and ground truth are excluded
from the means; the report lists them so the convention stays visible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import kernels
from .core import ClassRegistry, SemanticMap, ValidationError


@dataclass
class ConfusionMatrix:
    """Pixel counts with rows = ground truth, columns = prediction."""

    cells: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.cells, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValidationError(f"confusion matrix must be square, got {arr.shape}")
        if (arr < 0).any():
            raise ValidationError("confusion matrix cells must be >= 0")
        self.cells = arr

    @classmethod
    def zeros(cls, n_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((n_classes, n_classes), dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return self.cells.shape[0]

    @property
    def total(self) -> int:
        return int(self.cells.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Cellwise addition; commutative and associative across images."""
        if other.n_classes != self.n_classes:
            raise ValidationError("cannot merge matrices of different sizes")
        return ConfusionMatrix(self.cells + other.cells)


def confusion_accumulate(
    pred: SemanticMap, gt: SemanticMap, acc: ConfusionMatrix
) -> ConfusionMatrix:
    """Increment ``acc.cells[gt(p)][pred(p)]`` for every pixel; returns ``acc``."""
    if pred.labels.shape != gt.labels.shape:
        raise ValidationError(
            f"prediction {pred.labels.shape} vs ground truth {gt.labels.shape}"
        )
    n = acc.n_classes
    top = max(int(pred.labels.max()), int(gt.labels.max()))
    if top >= n:
        raise ValidationError(f"label {top} outside {n}-class matrix")
    kernels.confusion_update(acc.cells, gt.labels.ravel(), pred.labels.ravel())
    return acc


def iou_per_class(cm: ConfusionMatrix) -> dict[int, float | None]:
    """Per-class IoU = TP / (TP + FP + FN); None when the union is empty."""
    tp = np.diag(cm.cells)
    fp = cm.cells.sum(axis=0) - tp
    fn = cm.cells.sum(axis=1) - tp
    union = tp + fp + fn
    out: dict[int, float | None] = {}
    for c in range(cm.n_classes):
        out[c] = float(tp[c] / union[c]) if union[c] > 0 else None
    return out


def f1_from_iou(iou: float) -> float:
    """Dice/F1 from IoU: 2*iou / (1 + iou); fixes 0 and 1, monotone between."""
    if not 0.0 <= iou <= 1.0:
        raise ValidationError(f"iou {iou} outside [0, 1]")
    return 2.0 * iou / (1.0 + iou)


@dataclass(frozen=True)
class MetricsReport:
    """Per-class IoU/F1 plus their means over the evaluated classes."""

    per_class_iou: Mapping[int, float | None]
    per_class_f1: Mapping[int, float | None]
    miou: float
    mf1: float
    evaluated_classes: tuple[int, ...]
    excluded_classes: tuple[int, ...]
    class_names: tuple[str, ...]


def summarize(cm: ConfusionMatrix, registry: ClassRegistry) -> MetricsReport:
    """Report per-class IoU/F1 and means; background counts like any class."""
    if cm.n_classes != registry.n_classes:
        raise ValidationError(
            f"matrix has {cm.n_classes} classes, registry {registry.n_classes}"
        )
    if cm.total == 0:
        raise ValidationError("no data: confusion matrix is empty")
    ious = iou_per_class(cm)
    f1s = {c: None if v is None else f1_from_iou(v) for c, v in ious.items()}
    evaluated = tuple(c for c, v in ious.items() if v is not None)
    excluded = tuple(c for c, v in ious.items() if v is None)
    miou = float(np.mean([ious[c] for c in evaluated]))
    mf1 = float(np.mean([f1s[c] for c in evaluated]))
    return MetricsReport(
        per_class_iou=ious,
        per_class_f1=f1s,
        miou=miou,
        mf1=mf1,
        evaluated_classes=evaluated,
        excluded_classes=excluded,
        class_names=registry.names,
    )
