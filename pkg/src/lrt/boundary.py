"""Boundary maps from hard labels and from soft class scores.

Both operators use 4-connectivity on the range-image topology: columns
wrap azimuthally, rows do not (label boundaries ignore missing vertical
neighbors; the soft-score stencil replicates edge rows).
"""

from __future__ import annotations

import numpy as np

from .core import BoundaryMap, LabelImage
from .errors import NotNormalizedError, ShapeError

SUM_TOLERANCE = 1e-5


def boundaries_from_labels(labels: LabelImage, valid: np.ndarray) -> BoundaryMap:
    """Mark pixels whose 4-neighborhood crosses a class transition.

    A pixel is boundary iff it is valid with a non-ignore label and some
    valid 4-neighbor carries a different non-ignore label. Transitions
    against the ignore class do not count.
    """
    lab = labels.labels
    val = np.asarray(valid).astype(bool)
    if lab.shape != val.shape:
        raise ShapeError(f"labels {lab.shape} vs valid mask {val.shape}")

    here = val & (lab != 0)
    edge = np.zeros(lab.shape, dtype=bool)
    for shifted_lab, shifted_val in _four_neighbors(lab, val):
        edge |= here & shifted_val & (shifted_lab != 0) & (shifted_lab != lab)
    return BoundaryMap(values=edge.astype(np.float64))


def _four_neighbors(lab: np.ndarray, val: np.ndarray):
    yield np.roll(lab, 1, axis=1), np.roll(val, 1, axis=1)
    yield np.roll(lab, -1, axis=1), np.roll(val, -1, axis=1)
    up_lab, up_val = np.zeros_like(lab), np.zeros_like(val)
    up_lab[1:], up_val[1:] = lab[:-1], val[:-1]
    yield up_lab, up_val
    down_lab, down_val = np.zeros_like(lab), np.zeros_like(val)
    down_lab[:-1], down_val[:-1] = lab[1:], val[1:]
    yield down_lab, down_val


def _shift_up(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    out[1:] = a[:-1]
    out[0] = a[0]
    return out


def _shift_down(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    out[:-1] = a[1:]
    out[-1] = a[-1]
    return out


def check_normalized(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ShapeError(f"scores must be (H, W, C), got {probs.shape}")
    sums = probs.sum(axis=2)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    # Small absolute cushion so a probe exactly at the tolerance (e.g. a
    # finite-difference step of 1e-5) is still "within" it.
    if worst > SUM_TOLERANCE + 1e-9:
        raise NotNormalizedError(f"per-pixel scores sum off by up to {worst:.3g}")
    return probs


def laplacian_response(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class 5-point Laplacian and its L2 magnitude over classes.

    Returns (magnitude (H, W), per-class response (H, W, C)); the public
    edge map clamps the magnitude to [0, 1].
    """
    probs = check_normalized(probs)
    lap = (4.0 * probs
           - np.roll(probs, 1, axis=1) - np.roll(probs, -1, axis=1)
           - _shift_up(probs) - _shift_down(probs))
    magnitude = np.sqrt(np.einsum("hwc,hwc->hw", lap, lap))
    return magnitude, lap


def laplacian_adjoint(grad_lap: np.ndarray) -> np.ndarray:
    """Adjoint of the stencil in laplacian_response (for gradient flow)."""
    d = np.asarray(grad_lap, dtype=np.float64)
    out = 4.0 * d
    out -= np.roll(d, -1, axis=1) + np.roll(d, 1, axis=1)
    up_adj = np.zeros_like(d)
    up_adj[:-1] = d[1:]
    up_adj[0] += d[0]
    down_adj = np.zeros_like(d)
    down_adj[1:] = d[:-1]
    down_adj[-1] += d[-1]
    return out - up_adj - down_adj


def laplacian_edge(probs: np.ndarray) -> BoundaryMap:
    """Soft boundary map: clamp(sqrt(sum_c lap_c^2), 0, 1)."""
    magnitude, _ = laplacian_response(probs)
    return BoundaryMap(values=np.clip(magnitude, 0.0, 1.0))
