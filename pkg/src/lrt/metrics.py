"""Confusion-matrix accumulation and IoU/mIoU reporting.

Matrices are immutable value objects: accumulation returns a new matrix
and matrices over any partition of the sample pairs can be merged by
addition, so per-scan evaluation parallelizes trivially.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassRangeError, EmptyMatrixError, ShapeError


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """C x C counts; rows are ground truth, columns are predictions."""

    counts: np.ndarray  # (C, C) int64

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise ValueError(f"counts must be square, got {c.shape}")
        if c.min(initial=0) < 0:
            raise ValueError("counts must be nonnegative")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ShapeError(f"cannot merge {self.num_classes} vs {other.num_classes} classes")
        return ConfusionMatrix(counts=self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, gt, pred) -> ConfusionMatrix:
    """Count (gt, pred) pairs; pairs whose ground truth is ignore are skipped."""
    g = np.asarray(gt).ravel()
    p = np.asarray(pred).ravel()
    if g.shape != p.shape:
        raise ShapeError(f"gt {g.shape} vs pred {p.shape}")
    c = cm.num_classes
    if g.size:
        for name, ids in (("gt", g), ("pred", p)):
            lo, hi = int(ids.min()), int(ids.max())
            if lo < 0 or hi >= c:
                raise ClassRangeError(f"{name} ids span [{lo}, {hi}], outside [0, {c})")
    keep = g != 0
    if not keep.any():
        return cm
    flat = g[keep].astype(np.int64) * c + p[keep].astype(np.int64)
    add = np.bincount(flat, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(counts=cm.counts + add)


@dataclass(frozen=True, eq=False)
class IoUReport:
    """Per-class IoU (NaN where a class never occurs) and their mean."""

    per_class: np.ndarray  # (C,) float64; NaN for ignore and absent classes
    miou: float

    def scored_classes(self) -> np.ndarray:
        return np.nonzero(np.isfinite(self.per_class))[0]


def iou_report(cm: ConfusionMatrix, zero_absent: bool = False) -> IoUReport:
    """IoU_c = TP / (TP + FP + FN) per non-ignore class.

    Classes with an all-zero denominator are absent: excluded from the
    mean by default, or scored as 0 when zero_absent is set.
    """
    if cm.total == 0:
        raise EmptyMatrixError("confusion matrix holds no scored samples")
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn

    per_class = np.full(cm.num_classes, np.nan)
    scored = denom > 0
    scored[0] = False  # ignore class never reported
    per_class[scored] = tp[scored] / denom[scored]

    if zero_absent:
        absent = ~scored
        absent[0] = False
        per_class[absent] = 0.0
    mean_pool = per_class[1:]
    mean_pool = mean_pool[np.isfinite(mean_pool)]
    if mean_pool.size == 0:
        raise EmptyMatrixError("no scorable class in the matrix")
    return IoUReport(per_class=per_class, miou=float(mean_pool.mean()))
