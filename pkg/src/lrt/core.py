"""Domain types shared by every other module.

All types are immutable after construction: array fields are copied into
C-contiguous buffers and marked read-only, so instances can be shared
across threads or processes without synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSensorError

RANGE_COORD_RTOL = 1e-5    # |range - ||coords||| <= rtol * range on valid pixels
NORMAL_UNIT_ATOL = 1e-6    # unit-length tolerance for nonzero normals
_MAX_REPORTED_PER_RULE = 20


def _freeze(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        if arr.flags.writeable:  # adopt arrays that are already immutable
            out = arr.copy()
    elif out.base is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class PointCloud:
    """One scan: rows of (x, y, z, reflectivity), coordinates in meters.

    Reflectivity must already be normalized to [0, 1]; ingestion clamps it.
    """

    points: np.ndarray  # (N, 4) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains NaN/Inf")
        refl = pts[:, 3]
        if pts.shape[0] and (refl.min() < 0.0 or refl.max() > 1.0):
            raise ValueError("reflectivity outside [0, 1]")
        object.__setattr__(self, "points", _freeze(pts, np.float64))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def reflectivity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(frozen=True)
class SensorModel:
    """Range-image geometry: image size plus vertical field of view.

    fov_up is the angle (degrees) from the horizon up to the top beam;
    fov_total spans from the top beam down to the bottom beam.
    """

    height: int
    width: int
    fov_up: float
    fov_total: float
    name: str = "sensor"

    def __post_init__(self):
        if not (0.0 < self.fov_up < self.fov_total <= 180.0):
            raise DegenerateSensorError(
                f"need 0 < fov_up < fov_total <= 180, got "
                f"fov_up={self.fov_up}, fov_total={self.fov_total}"
            )
        if self.height < 2 or self.width < 4:
            raise DegenerateSensorError(
                f"need height >= 2 and width >= 4, got {self.height}x{self.width}"
            )


@dataclass(frozen=True, eq=False)
class RangeImageStack:
    """Multi-channel range image plus the point-index map.

    Invalid pixels use one canonical encoding: mask=0, range=0, index=-1,
    normals=(0,0,0). Pixels synthesized by stripe repair keep index=-1
    while carrying mask=1 and a positive range.
    """

    range: np.ndarray         # (H, W) float64, meters, 0 where invalid
    reflectivity: np.ndarray  # (H, W) float64 in [0, 1]
    normals: np.ndarray       # (H, W, 3) float64, unit or zero
    coords: np.ndarray        # (H, W, 3) float64, meters
    index: np.ndarray         # (H, W) int32, point index, -1 where empty
    mask: np.ndarray          # (H, W) uint8, 1 = valid

    def __post_init__(self):
        h, w = np.asarray(self.range).shape
        shapes = {
            "range": (h, w), "reflectivity": (h, w), "normals": (h, w, 3),
            "coords": (h, w, 3), "index": (h, w), "mask": (h, w),
        }
        for name, want in shapes.items():
            got = np.asarray(getattr(self, name)).shape
            if got != want:
                raise ValueError(f"{name} shape {got}, expected {want}")
        object.__setattr__(self, "range", _freeze(self.range, np.float64))
        object.__setattr__(self, "reflectivity", _freeze(self.reflectivity, np.float64))
        object.__setattr__(self, "normals", _freeze(self.normals, np.float64))
        object.__setattr__(self, "coords", _freeze(self.coords, np.float64))
        object.__setattr__(self, "index", _freeze(self.index, np.int32))
        object.__setattr__(self, "mask", _freeze(self.mask, np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.range.shape


@dataclass(frozen=True, eq=False)
class LabelImage:
    """Per-pixel semantic class ids; 0 is the reserved ignore class."""

    labels: np.ndarray  # (H, W) int32
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError(f"labels must be 2-D, got shape {lab.shape}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise ValueError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{lab.min()}, {lab.max()}]"
            )
        object.__setattr__(self, "labels", _freeze(lab, np.int32))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class BoundaryMap:
    """Soft boundary strengths in [0, 1]."""

    values: np.ndarray  # (H, W) float64

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {vals.shape}")
        if vals.size and (not np.all(np.isfinite(vals)) or vals.min() < 0.0 or vals.max() > 1.0):
            raise ValueError("boundary values must be finite and in [0, 1]")
        object.__setattr__(self, "values", _freeze(vals, np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Rows are per-sample feature vectors."""

    data: np.ndarray  # (N, D) float64

    def __post_init__(self):
        mat = np.asarray(self.data, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
            raise ValueError(f"data must be (N>=1, D>=1), got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ValueError("feature matrix contains NaN/Inf")
        object.__setattr__(self, "data", _freeze(mat, np.float64))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the combined multi-task objective."""

    lambda_P: float = 1.0
    lambda_B: float = 1.0
    lambda_Seg: float = 1.0
    lambda_M: float = 1.0
    lambda_C: float = 1.0
    lambda_D: float = 1.0
    lambda_B_GAN: float = 1.0
    lambda_B_BCE: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"{name} must be a finite nonnegative float, got {value}")


def validate_stack(stack: RangeImageStack, allow_synthetic: bool = False) -> list[str]:
    """Check every RangeImageStack invariant; return one message per breach.

    allow_synthetic accepts repaired pixels (mask=1, range>0, index=-1),
    which stripe repair produces on purpose.

    Returns an empty list exactly when all invariants hold.
    """
    violations: list[str] = []
    mask = stack.mask.astype(bool)
    index = stack.index
    rng = stack.range

    def report(rule: str, bad: np.ndarray, fmt):
        rows, cols = np.nonzero(bad)
        for k in range(min(rows.size, _MAX_REPORTED_PER_RULE)):
            violations.append(fmt(int(rows[k]), int(cols[k])))
        if rows.size > _MAX_REPORTED_PER_RULE:
            violations.append(f"{rule}: (+{rows.size - _MAX_REPORTED_PER_RULE} more)")

    # Canonical invalid-pixel encoding: mask=0 <=> index=-1 <=> range=0.
    bad = mask & (rng == 0.0)
    report("mask/range", bad, lambda r, c: f"range[{r},{c}]=0 but mask[{r},{c}]=1 (mask/range consistency)")
    bad = ~mask & (rng != 0.0)
    report("mask/range", bad, lambda r, c: f"range[{r},{c}]!=0 but mask[{r},{c}]=0 (mask/range consistency)")
    bad = ~mask & (index != -1)
    report("mask/index", bad, lambda r, c: f"index[{r},{c}]!=-1 but mask[{r},{c}]=0 (mask/index consistency)")
    if not allow_synthetic:
        bad = mask & (index == -1)
        report("mask/index", bad, lambda r, c: f"index[{r},{c}]=-1 but mask[{r},{c}]=1 (mask/index consistency)")

    # Valid pixels: stored range must equal the coordinate norm.
    norms = np.linalg.norm(stack.coords, axis=2)
    with np.errstate(invalid="ignore"):
        bad = mask & (np.abs(norms - rng) > RANGE_COORD_RTOL * np.maximum(rng, 1e-30))
    report("range/coords", bad,
           lambda r, c: f"coords[{r},{c}] norm {norms[r, c]:.9g} != range {rng[r, c]:.9g} (range/coords consistency)")

    # Normals are unit length or exactly zero, components in [-1, 1].
    nmag = np.linalg.norm(stack.normals, axis=2)
    nonzero = np.any(stack.normals != 0.0, axis=2)
    bad = nonzero & (np.abs(nmag - 1.0) > NORMAL_UNIT_ATOL)
    report("normals/unit", bad,
           lambda r, c: f"normals[{r},{c}] norm {nmag[r, c]:.9g} not unit (normals unit-or-zero)")
    bad = np.any(np.abs(stack.normals) > 1.0 + NORMAL_UNIT_ATOL, axis=2)
    report("normals/range", bad,
           lambda r, c: f"normals[{r},{c}] component outside [-1,1] (normals fixed range)")

    # Reflectivity channel stays inside its normalized range.
    bad = (stack.reflectivity < 0.0) | (stack.reflectivity > 1.0)
    report("reflectivity/range", bad,
           lambda r, c: f"reflectivity[{r},{c}]={stack.reflectivity[r, c]:.9g} outside [0,1] (reflectivity range)")

    return violations


def empty_stack(height: int, width: int) -> RangeImageStack:
    """All-invalid stack of the given size (mask 0, range 0, index -1)."""
    return RangeImageStack(
        range=np.zeros((height, width)),
        reflectivity=np.zeros((height, width)),
        normals=np.zeros((height, width, 3)),
        coords=np.zeros((height, width, 3)),
        index=np.full((height, width), -1, dtype=np.int32),
        mask=np.zeros((height, width), dtype=np.uint8),
    )
