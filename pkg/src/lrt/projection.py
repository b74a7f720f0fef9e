"""Spherical projection of a scan onto the range-image grid and back.

Geometry: yaw = atan2(y, x) maps to columns with u=w/2 at +x and wraps
azimuthally; pitch = arcsin(z/r) maps to rows, row 0 at fov_up descending
over fov_total degrees. Pixel collisions keep the nearest return, ties by
smaller point index, so the result is independent of input point order.
"""

from __future__ import annotations

import numpy as np

from .core import LabelImage, PointCloud, RangeImageStack, SensorModel
from .errors import EmptyCloudError, ShapeError

DEFAULT_R_MIN = 1e-3  # meters; drops sensor-origin returns


def pixel_coordinates(xyz: np.ndarray, sensor: SensorModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map points to (v, u, r) under the range-image parameterization.

    u = floor(0.5 * (1 - yaw/pi) * w) modulo w
    v = floor(((fov_up - pitch_deg) / fov_total) * h) clamped to [0, h-1]
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    safe_r = np.where(r > 0.0, r, 1.0)
    yaw = np.arctan2(y, x)
    pitch = np.arcsin(np.clip(z / safe_r, -1.0, 1.0))

    u = np.floor(0.5 * (1.0 - yaw / np.pi) * sensor.width).astype(np.int64)
    u %= sensor.width
    v = np.floor((sensor.fov_up - np.degrees(pitch)) * (sensor.height / sensor.fov_total))
    v = np.clip(v, 0, sensor.height - 1).astype(np.int64)
    return v, u, r


def pixel_rays(sensor: SensorModel, v: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Unit direction of each pixel center; inverse of pixel_coordinates."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    yaw = np.pi * (1.0 - 2.0 * (u + 0.5) / sensor.width)
    pitch = np.radians(sensor.fov_up - (v + 0.5) * sensor.fov_total / sensor.height)
    cos_p = np.cos(pitch)
    return np.stack([cos_p * np.cos(yaw), cos_p * np.sin(yaw), np.sin(pitch)], axis=-1)


def project(cloud: PointCloud, sensor: SensorModel, r_min: float = DEFAULT_R_MIN) -> RangeImageStack:
    """Project a cloud to a RangeImageStack; the normals channel stays zero.

    Returns with smaller range winning each pixel collision (nearest
    surface); equal ranges fall back to the smaller point index.
    """
    if cloud.count == 0:
        raise EmptyCloudError("cannot project an empty point cloud")
    h, w = sensor.height, sensor.width

    v, u, r = pixel_coordinates(cloud.xyz, sensor)
    keep = r >= r_min
    idx = np.nonzero(keep)[0]

    rng_img = np.zeros((h, w))
    refl_img = np.zeros((h, w))
    coords_img = np.zeros((h, w, 3))
    index_img = np.full((h, w), -1, dtype=np.int32)
    mask_img = np.zeros((h, w), dtype=np.uint8)

    if idx.size:
        pix = v[idx] * w + u[idx]
        # Scatter-min winner selection: smallest range per pixel, exact
        # range ties resolved to the smallest point index. The surviving
        # (point, pixel) pairs are unique, so the scatters below are
        # order-independent.
        ri = r[idx]
        best_r = np.full(h * w, np.inf)
        np.minimum.at(best_r, pix, ri)
        cand = ri == best_r[pix]
        cand_idx = idx[cand]
        cand_pix = pix[cand]
        best_i = np.full(h * w, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(best_i, cand_pix, cand_idx)
        win = cand_idx == best_i[cand_pix]
        pts = cand_idx[win]
        dst = cand_pix[win]

        rng_img.reshape(-1)[dst] = r[pts]
        refl_img.reshape(-1)[dst] = cloud.reflectivity[pts]
        coords_img.reshape(-1, 3)[dst] = cloud.xyz[pts]
        index_img.reshape(-1)[dst] = pts
        mask_img.reshape(-1)[dst] = 1

    normals_img = np.zeros((h, w, 3))
    for arr in (rng_img, refl_img, coords_img, index_img, mask_img, normals_img):
        arr.flags.writeable = False  # adopted as-is by the stack
    return RangeImageStack(
        range=rng_img, reflectivity=refl_img, normals=normals_img,
        coords=coords_img, index=index_img, mask=mask_img,
    )


def backproject_labels(labels: LabelImage, stack: RangeImageStack, cloud: PointCloud,
                       sensor: SensorModel, r_min: float = DEFAULT_R_MIN) -> np.ndarray:
    """Per-point class ids read at each point's own projected pixel.

    Every point gets the label at its (v, u), not only index-map winners,
    so occluded points inherit the nearest surface's label. Points below
    r_min have no pixel and get the ignore class.
    """
    h, w = sensor.height, sensor.width
    if labels.shape != (h, w) or stack.shape != (h, w):
        raise ShapeError(
            f"labels {labels.shape} / stack {stack.shape} do not match sensor {(h, w)}"
        )
    v, u, r = pixel_coordinates(cloud.xyz, sensor)
    out = labels.labels[v, u].astype(np.int32)
    out[r < r_min] = 0
    return out
