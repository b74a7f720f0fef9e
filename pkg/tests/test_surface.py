import numpy as np
import pytest

from conftest import grid_cloud, random_cloud
from lrt.core import PointCloud, SensorModel
from lrt.projection import pixel_rays, project
from lrt.surface import estimate_normals


def wall_cloud(sensor, wall_x=5.0):
    """One point per pixel ray that actually hits the plane x = wall_x."""
    vv, uu = np.meshgrid(np.arange(sensor.height), np.arange(sensor.width),
                         indexing="ij")
    rays = pixel_rays(sensor, vv.ravel(), uu.ravel())
    hits = rays[:, 0] > 0.5  # frontal rays only, oblique ones skipped
    rays = rays[hits]
    t = wall_x / rays[:, 0]
    xyz = rays * t[:, None]
    pts = np.concatenate([xyz, np.full((len(xyz), 1), 0.5)], axis=1)
    return PointCloud(points=pts)


class TestSyntheticSurfaces:
    def test_sphere_normals_are_radial(self, small_sensor):
        radius = 8.0
        stack = estimate_normals(project(grid_cloud(small_sensor, base_range=radius),
                                         small_sensor))
        interior = np.zeros(stack.shape, dtype=bool)
        interior[1:-1, :] = True
        interior &= np.any(stack.normals != 0.0, axis=2)
        assert interior.sum() > 100
        expected = -stack.coords[interior] / radius
        assert np.max(np.abs(stack.normals[interior] - expected)) < 1e-3

    def test_planar_wall_normals(self):
        sensor = SensorModel(height=32, width=256, fov_up=10.0, fov_total=20.0)
        stack = estimate_normals(project(wall_cloud(sensor, wall_x=5.0), sensor))
        got = stack.normals[np.any(stack.normals != 0.0, axis=2)]
        assert len(got) > 50
        assert np.max(np.abs(got - np.array([-1.0, 0.0, 0.0]))) < 1e-3

    def test_invalid_neighbor_zeroes_normal(self, small_sensor):
        cloud = grid_cloud(small_sensor, rng=np.random.default_rng(2))
        stack = project(cloud, small_sensor)
        # knock out one pixel, then re-project without that point
        vs, us = 8, 20
        victim = stack.index[vs, us]
        keep = np.ones(cloud.count, dtype=bool)
        keep[victim] = False
        holed = estimate_normals(project(PointCloud(points=cloud.points[keep]),
                                         small_sensor))
        assert (holed.normals[vs, us] == 0.0).all()
        for v, u in ((vs - 1, us), (vs + 1, us), (vs, (us - 1) % 64), (vs, (us + 1) % 64)):
            assert (holed.normals[v, u] == 0.0).all()

    def test_edge_rows_are_zero(self, small_sensor):
        stack = estimate_normals(project(grid_cloud(small_sensor), small_sensor))
        assert (stack.normals[0] == 0.0).all()
        assert (stack.normals[-1] == 0.0).all()


class TestNormalInvariants:
    def test_unit_or_zero_and_facing(self, small_sensor):
        rng = np.random.default_rng(3)
        for _ in range(5):
            cloud = random_cloud(rng, 1500)
            stack = estimate_normals(project(cloud, small_sensor))
            mag = np.linalg.norm(stack.normals, axis=2)
            nonzero = np.any(stack.normals != 0.0, axis=2)
            assert np.max(np.abs(mag[nonzero] - 1.0)) < 1e-6
            assert (mag[~nonzero] == 0.0).all()
            assert np.abs(stack.normals).max() <= 1.0 + 1e-9
            dots = np.einsum("hwc,hwc->hw", stack.normals, stack.coords)
            assert dots[nonzero].max() <= 1e-9

    def test_only_fully_valid_neighborhoods_get_normals(self, small_sensor):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng, 800)
        stack = estimate_normals(project(cloud, small_sensor))
        valid = stack.mask.astype(bool)
        ok = valid.copy()
        ok &= np.roll(valid, 1, axis=1) & np.roll(valid, -1, axis=1)
        ok[1:] &= valid[:-1]
        ok[:-1] &= valid[1:]
        ok[0] = ok[-1] = False
        nonzero = np.any(stack.normals != 0.0, axis=2)
        assert not (nonzero & ~ok).any()
