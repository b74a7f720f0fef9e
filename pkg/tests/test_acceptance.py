"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a `[PASS] <criterion>` line on success (run with -s to see
them); a failure surfaces as a normal pytest failure.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import grid_cloud, random_cloud, write_config
from lrt import io as lio
from lrt.cli import main
from lrt.core import LabelImage, SensorModel
from lrt.losses import lovasz_softmax
from lrt.metrics import ConfusionMatrix, accumulate, iou_report
from lrt.projection import pixel_coordinates, project
from lrt.restore import inpaint_ns, locate_stripes, repair_stack
from lrt.selftest import run_gradient_suite
from lrt.surface import estimate_normals
from oracles import components_with_rings, jaccard_per_class, naive_confusion

GRAD_TOL = 1e-4
GRAD_POINTS = 100
LOVASZ_TOL = 1e-9
RANGE_TOL = 1e-6
RAMP_TOL = 1e-3
MAXP_SLACK = 1e-6
THROUGHPUT_MS = 50.0


def report(line):
    print(f"[PASS] {line}")


def test_gradient_suite():
    t0 = time.perf_counter()
    results = run_gradient_suite(seed=2024, points_per_kernel=GRAD_POINTS)
    elapsed = time.perf_counter() - t0
    worst = {k: v["max_rel_err"] for k, v in results.items()}
    assert all(err < GRAD_TOL for err in worst.values()), worst
    assert elapsed < 30.0
    report(f"gradient suite: {len(results)} kernels x {GRAD_POINTS} points, "
           f"max rel err {max(worst.values()):.2e} < {GRAD_TOL} ({elapsed:.1f}s)")


def test_lovasz_oracle_exhaustive():
    t0 = time.perf_counter()
    classes = (1, 2, 3)
    num_classes = 4
    worst = 0.0
    cases = 0
    eye = np.eye(num_classes)
    for lab in itertools.product(classes, repeat=4):
        lab_arr = np.asarray(lab, dtype=np.int32).reshape(1, 4)
        labels = LabelImage(labels=lab_arr, num_classes=num_classes)
        for pred in itertools.product(classes, repeat=4):
            pred_arr = np.asarray(pred).reshape(1, 4)
            probs = eye[pred_arr]
            got = lovasz_softmax(probs, labels).value
            present = np.unique(lab_arr)
            want = float(np.mean([1.0 - jaccard_per_class(lab_arr, pred_arr, c)
                                  for c in present]))
            worst = max(worst, abs(got - want))
            cases += 1
    elapsed = time.perf_counter() - t0
    assert cases == 3 ** 4 * 3 ** 4
    assert worst <= LOVASZ_TOL
    assert elapsed < 10.0
    report(f"Lovasz oracle: {cases} exhaustive cases, max |err| {worst:.1e} "
           f"<= {LOVASZ_TOL} ({elapsed:.1f}s)")


def test_projection_round_trip():
    rng = np.random.default_rng(99)
    sensor = SensorModel(height=64, width=2048, fov_up=3.0, fov_total=28.0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        cloud = random_cloud(rng, int(rng.integers(100, 5001)))
        stack = project(cloud, sensor)
        vs, us = np.nonzero(stack.mask)
        winners = stack.index[vs, us]
        v2, u2, r2 = pixel_coordinates(cloud.xyz[winners], sensor)
        assert np.array_equal(v2, vs) and np.array_equal(u2, us)
        worst = max(worst, float(np.max(np.abs(r2 - stack.range[vs, us]))))
    elapsed = time.perf_counter() - t0
    assert worst < RANGE_TOL
    assert elapsed < 20.0
    report(f"projection round trip: 1000 scans, max range err {worst:.1e} "
           f"< {RANGE_TOL} ({elapsed:.1f}s)")


def test_repair_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)

    # every-4th-beam dropout leaves no invalid pixel inside the StripeMask
    for height, width in ((64, 2048), (64, 512), (32, 256)):
        sensor = SensorModel(height=height, width=width, fov_up=3.0, fov_total=28.0)
        rows = [v for v in range(height) if v % 4 != 3]
        stack = project(grid_cloud(sensor, rows=rows, rng=rng), sensor)
        repaired, _, stripes = repair_stack(stack, sensor)
        rep = stripes.as_bool()
        assert stripes.count > 0
        invalid_inside = int((~repaired.mask.astype(bool) & rep).sum())
        assert invalid_inside == 0
        assert (repaired.range[rep] > 0).all()

    # constant-image inpainting is exact
    img = np.full((16, 64), 5.0)
    repair = np.zeros((16, 64), dtype=bool)
    repair[4:12, 31] = True
    out = inpaint_ns(img, repair, valid=~repair)
    assert (out == 5.0).all()

    # linear-ramp inpainting restores the ramp within 1e-3
    h, w = 16, 64
    ramp = np.tile(np.linspace(0.0, 6.3, w), (h, 1))
    repair = np.zeros((h, w), dtype=bool)
    repair[:, 21] = True
    masked = ramp.copy()
    masked[repair] = 0.0
    out = inpaint_ns(masked, repair, valid=~repair)
    ramp_err = float(np.max(np.abs(out[repair] - ramp[repair])))
    assert ramp_err < RAMP_TOL

    # maximum principle on 50 random instances
    for _ in range(50):
        img = np.kron(rng.normal(0, 2, (4, 5)), np.ones((3, 6)))
        img += rng.normal(0, 0.05, img.shape)
        repair = rng.random(img.shape) < 0.15
        valid = ~repair
        out = inpaint_ns(img, repair, valid=valid)
        comp, bounds = components_with_rings(repair, valid, img)
        for r, c in np.argwhere(repair):
            lo, hi = bounds[comp[r, c]]
            assert lo - MAXP_SLACK <= out[r, c] <= hi + MAXP_SLACK

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    report(f"repair suite: dropout scans fully repaired, constant exact, "
           f"ramp err {ramp_err:.1e} < {RAMP_TOL}, max principle x50 ({elapsed:.1f}s)")


def test_metrics_oracle():
    rng = np.random.default_rng(101)
    gt = rng.integers(0, 7, 10_000)
    pred = rng.integers(0, 7, 10_000)
    whole = accumulate(ConfusionMatrix.zeros(7), gt, pred)
    assert np.array_equal(whole.counts, naive_confusion(gt, pred, 7))

    merged = ConfusionMatrix.zeros(7)
    for lo in range(0, 10_000, 1337):
        merged = merged + accumulate(ConfusionMatrix.zeros(7),
                                     gt[lo:lo + 1337], pred[lo:lo + 1337])
    assert np.array_equal(merged.counts, whole.counts)
    rep = iou_report(whole)
    assert 0.0 <= rep.miou <= 1.0
    report("metrics oracle: 10k-pair naive tally exact, merge-of-partitions exact")


def test_io_bit_exactness():
    rng = np.random.default_rng(102)
    for _ in range(100):
        n = int(rng.integers(1, 128))
        scan = np.concatenate([rng.normal(0, 30, (n, 3)), rng.random((n, 1))],
                              axis=1).astype("<f4").tobytes()
        assert lio.write_scan_bin(lio.read_scan_bin(scan)) == scan

        sem = rng.integers(0, 0x10000, n)
        inst = rng.integers(0, 0x10000, n)
        blob = lio.write_label_file(sem, inst)
        # bit-split law, both directions
        vals = np.frombuffer(blob, dtype="<u4")
        assert np.array_equal(vals, (sem | (inst << 16)).astype(np.uint32))
        s2, i2 = lio.read_label_raw(blob)
        assert np.array_equal(s2, sem) and np.array_equal(i2, inst)
        assert lio.write_label_file(s2, i2) == blob

        dims = tuple(int(rng.integers(1, 7))
                     for _ in range(int(rng.integers(1, 5))))
        dtype = rng.choice(["<f4", "<f8", "<i4", "u1"])
        if np.dtype(dtype).kind == "f":
            arr = rng.normal(0, 5, dims).astype(dtype)
        else:
            arr = rng.integers(0, 100, dims).astype(dtype)
        tensor = lio.tensor_to_bytes(arr)
        back = lio.tensor_from_bytes(tensor)
        assert np.array_equal(back, arr) and back.dtype == arr.dtype
        assert lio.tensor_to_bytes(back) == tensor
    report("io bit-exactness: 100 fixtures per format round-trip byte-identical")


def test_geometry_fixture():
    sensor = SensorModel(height=64, width=2048, fov_up=3.0, fov_total=28.0)
    v, u, r = pixel_coordinates(np.array([[10.0, 0.0, 0.0]]), sensor)
    assert (int(v[0]), int(u[0])) == (6, 1024)
    report("geometry fixture: point (10,0,0) lands at (v,u) = (6,1024)")


def test_throughput():
    sensor = SensorModel(height=64, width=2048, fov_up=3.0, fov_total=28.0)
    cloud = grid_cloud(sensor, rng=np.random.default_rng(103))
    assert cloud.count >= 130_000
    estimate_normals(project(cloud, sensor))  # warm-up
    best = math.inf
    for _ in range(5):
        t0 = time.perf_counter()
        estimate_normals(project(cloud, sensor))
        best = min(best, time.perf_counter() - t0)
    assert best * 1000.0 < THROUGHPUT_MS
    report(f"throughput: project + normals on {cloud.count} points in "
           f"{best * 1000:.1f}ms < {THROUGHPUT_MS:.0f}ms")


def test_paper_scale_crop(tmp_path):
    # full-resolution pipeline run: 64x2048 maps cropped to 64x512
    sensor = SensorModel(height=64, width=2048, fov_up=3.0, fov_total=28.0)
    rng = np.random.default_rng(104)
    rows = [v for v in range(64) if v % 4 != 3]
    cloud = grid_cloud(sensor, rows=rows, rng=rng)
    scan_dir = tmp_path / "scans"
    scan_dir.mkdir()
    (scan_dir / "000000.bin").write_bytes(lio.write_scan_bin(cloud))
    config = write_config(tmp_path / "config.json", height=64, width=2048,
                          pipeline={"inpaint_max_iters": 60})
    out = tmp_path / "out"
    rc = main(["pipeline", "--scan-dir", str(scan_dir), "--config", str(config),
               "--out", str(out), "--crop-width", "512"])
    assert rc == 0
    assert lio.read_tensor(out / "000000" / "range.npy").shape == (64, 512)
    assert lio.read_tensor(out / "000000" / "normals.npy").shape == (64, 512, 3)
    report("paper-scale crop: 64x2048 pipeline output cropped to 64x512")
