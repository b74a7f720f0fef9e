import json

import numpy as np
import pytest

from lrt.core import PointCloud, SensorModel
from lrt.projection import pixel_rays


@pytest.fixture
def sensor():
    return SensorModel(height=64, width=2048, fov_up=3.0, fov_total=28.0, name="hdl64")


@pytest.fixture
def small_sensor():
    return SensorModel(height=16, width=64, fov_up=3.0, fov_total=28.0, name="tiny")


def grid_cloud(sensor, rows=None, rng=None, base_range=10.0, spread=2.0):
    """One point per pixel center of the chosen rows; full azimuth coverage.

    Pixel-center rays re-project to their own pixel, so the resulting stack
    covers exactly the requested rows.
    """
    rows = np.arange(sensor.height) if rows is None else np.asarray(rows)
    vv, uu = np.meshgrid(rows, np.arange(sensor.width), indexing="ij")
    vv = vv.ravel()
    uu = uu.ravel()
    rays = pixel_rays(sensor, vv, uu)
    if rng is None:
        r = np.full(vv.shape, base_range)
        refl = np.full(vv.shape, 0.5)
    else:
        r = base_range + spread * rng.random(vv.size)
        refl = rng.random(vv.size)
    pts = np.concatenate([rays * r[:, None], refl[:, None]], axis=1)
    return PointCloud(points=pts)


def random_cloud(rng, n, r_lo=2.0, r_hi=50.0):
    """Points with uniform random directions and ranges in [r_lo, r_hi]."""
    costh = rng.uniform(-1.0, 1.0, n)
    sinth = np.sqrt(1.0 - costh ** 2)
    phi = rng.uniform(-np.pi, np.pi, n)
    r = rng.uniform(r_lo, r_hi, n)
    pts = np.stack([
        r * sinth * np.cos(phi),
        r * sinth * np.sin(phi),
        r * costh,
        rng.random(n),
    ], axis=1)
    return PointCloud(points=pts)


DEFAULT_REMAP = {"0": 0, "10": 1, "20": 2, "30": 3, "40": 4}


def write_config(path, height=16, width=64, fov_up=3.0, fov_total=28.0,
                 num_classes=5, remap=None, loss_weights=None, pipeline=None):
    doc = {
        "sensor": {"name": "test", "height": height, "width": width,
                   "fov_up_deg": fov_up, "fov_total_deg": fov_total},
        "labels": {"num_classes": num_classes,
                   "remap": DEFAULT_REMAP if remap is None else remap},
    }
    if loss_weights is not None:
        doc["loss_weights"] = loss_weights
    if pipeline is not None:
        doc["pipeline"] = pipeline
    path.write_text(json.dumps(doc, indent=2))
    return path
