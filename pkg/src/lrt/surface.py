"""Normal-map estimation from the projected coordinate channel.

Normals come from the cross product of central-difference tangents over
the image grid: horizontal neighbors wrap azimuthally, vertical edge rows
get zero normals. Each normal is flipped to face the sensor, so its
components stay in [-1, 1] regardless of the sensor's range scale.
"""

from __future__ import annotations

import numpy as np

from .core import RangeImageStack

DEGENERATE_CROSS_NORM = 1e-12


def _roll_h(arr: np.ndarray, shift: int) -> np.ndarray:
    return np.roll(arr, shift, axis=1)


def estimate_normals(stack: RangeImageStack) -> RangeImageStack:
    """Return a copy of the stack with the normals channel filled.

    A pixel gets a normal only when it and all four 4-neighbors are valid
    (horizontal wrap, no vertical wrap); everything else stays (0,0,0).
    """
    coords = stack.coords
    valid = stack.mask.astype(bool)
    h, w = valid.shape

    # Central differences in place of rolled copies; vertical edge rows are
    # masked out below so their tangent values never matter.
    t_u = np.empty_like(coords)
    np.subtract(coords[:, 2:], coords[:, :-2], out=t_u[:, 1:-1])
    t_u[:, 0] = coords[:, 1] - coords[:, -1]
    t_u[:, -1] = coords[:, 0] - coords[:, -2]
    t_v = np.zeros_like(coords)
    np.subtract(coords[2:], coords[:-2], out=t_v[1:-1])

    ok = valid & _roll_h(valid, 1) & _roll_h(valid, -1)
    ok[1:] &= valid[:-1]
    ok[:-1] &= valid[1:]
    ok[0] = False
    ok[-1] = False

    # Hand-rolled cross product; np.cross is noticeably slower here.
    n = np.empty_like(coords)
    a0, a1, a2 = t_u[..., 0], t_u[..., 1], t_u[..., 2]
    b0, b1, b2 = t_v[..., 0], t_v[..., 1], t_v[..., 2]
    n[..., 0] = a1 * b2 - a2 * b1
    n[..., 1] = a2 * b0 - a0 * b2
    n[..., 2] = a0 * b1 - a1 * b0

    n0, n1, n2 = n[..., 0], n[..., 1], n[..., 2]
    mag = np.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
    ok &= mag >= DEGENERATE_CROSS_NORM
    with np.errstate(invalid="ignore", divide="ignore"):
        n /= mag[..., None]
    # Face the sensor: flip wherever n points away from the origin.
    dots = (n0 * coords[..., 0] + n1 * coords[..., 1] + n2 * coords[..., 2])
    n[dots > 0.0] *= -1.0
    n[~ok] = 0.0
    n.flags.writeable = False

    return RangeImageStack(
        range=stack.range, reflectivity=stack.reflectivity, normals=n,
        coords=stack.coords, index=stack.index, mask=stack.mask,
    )
