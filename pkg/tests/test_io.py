import io as stdio
import json
import struct

import numpy as np
import pytest

from conftest import write_config
from lrt import io as lio
from lrt.errors import (
    DecodeError,
    DTypeError,
    FormatError,
    LengthError,
    SchemaError,
)
from oracles import pgm_reference_bytes


class TestScanCodec:
    def test_single_record(self):
        data = struct.pack("<4f", 1.0, 2.0, 3.0, 0.5)
        cloud = lio.read_scan_bin(data)
        assert cloud.count == 1
        assert cloud.points[0].tolist() == [1.0, 2.0, 3.0, 0.5]

    def test_empty_stream(self):
        assert lio.read_scan_bin(b"").count == 0

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        pts = np.concatenate([rng.normal(0, 20, (2, 3)), rng.random((2, 1))], axis=1)
        data = lio.write_scan_bin(lio.read_scan_bin(
            pts.astype("<f4").tobytes()))
        back = lio.read_scan_bin(data)
        assert np.array_equal(back.points, pts.astype("<f4").astype(np.float64))

    def test_length_error(self):
        with pytest.raises(LengthError):
            lio.read_scan_bin(b"\x00" * 15)

    def test_decode_error_on_nan(self):
        with pytest.raises(DecodeError):
            lio.read_scan_bin(struct.pack("<4f", 1.0, float("nan"), 0.0, 0.0))

    def test_remission_clamped(self):
        cloud = lio.read_scan_bin(struct.pack("<4f", 0.0, 0.0, 1.0, 7.5))
        assert cloud.points[0, 3] == 1.0


class TestLabelCodec:
    def test_bit_split_with_remap(self):
        remap = lio.LabelRemap(table={10: 1}, num_classes=2)
        data = struct.pack("<I", 0x0002000A)
        assert lio.read_label_file(data, remap, 1).tolist() == [1]
        sem, inst = lio.read_label_raw(data)
        assert sem.tolist() == [10] and inst.tolist() == [2]

    def test_zero_maps_to_ignore(self):
        remap = lio.LabelRemap(table={10: 1}, num_classes=2)
        assert lio.read_label_file(struct.pack("<I", 0), remap, 1).tolist() == [0]

    def test_unmapped_defaults_to_ignore(self):
        remap = lio.LabelRemap(table={10: 1}, num_classes=2)
        assert lio.read_label_file(struct.pack("<I", 99), remap, 1).tolist() == [0]

    def test_length_error(self):
        remap = lio.LabelRemap(table={}, num_classes=1)
        with pytest.raises(LengthError):
            lio.read_label_file(b"\x00" * 8, remap, 3)

    def test_round_trip_and_bit_law(self):
        rng = np.random.default_rng(1)
        sem = rng.integers(0, 0x10000, 50)
        inst = rng.integers(0, 0x10000, 50)
        data = lio.write_label_file(sem, inst)
        # law: v = sem | (inst << 16), checked both directions
        values = np.frombuffer(data, dtype="<u4")
        assert np.array_equal(values, (sem | (inst << 16)).astype(np.uint32))
        sem2, inst2 = lio.read_label_raw(data)
        assert np.array_equal(sem2, sem) and np.array_equal(inst2, inst)
        assert lio.write_label_file(sem2, inst2) == data

    def test_locality(self):
        rng = np.random.default_rng(2)
        remap = lio.LabelRemap(table={i: i % 7 for i in range(64)}, num_classes=7)
        a = lio.write_label_file(rng.integers(0, 64, 20), rng.integers(0, 4, 20))
        b = lio.write_label_file(rng.integers(0, 64, 20), rng.integers(0, 4, 20))
        for i in (0, 7, 19):
            spliced = a[: 4 * i] + b[4 * i: 4 * i + 4] + a[4 * i + 4:]
            la = lio.read_label_file(a, remap, 20)
            ls = lio.read_label_file(spliced, remap, 20)
            lb = lio.read_label_file(b, remap, 20)
            assert ls[i] == lb[i]
            mask = np.arange(20) != i
            assert np.array_equal(ls[mask], la[mask])

    def test_remap_validation(self):
        with pytest.raises(ValueError):
            lio.LabelRemap(table={10: 9}, num_classes=5)
        with pytest.raises(ValueError):
            lio.LabelRemap(table={0x1FFFF: 1}, num_classes=5)


class TestNpyCodec:
    @pytest.mark.parametrize("dtype,shape", [
        ("<f4", (64, 2048)), ("<f8", (5,)), ("<i4", (3, 4, 5)), ("u1", (2, 2, 2, 2)),
    ])
    def test_round_trip_bit_identical(self, dtype, shape):
        rng = np.random.default_rng(3)
        if np.dtype(dtype).kind == "f":
            arr = rng.normal(0, 10, shape).astype(dtype)
        else:
            arr = rng.integers(0, 100, shape).astype(dtype)
        blob = lio.tensor_to_bytes(arr)
        back = lio.tensor_from_bytes(blob)
        assert back.dtype == np.dtype(dtype) and back.shape == shape
        assert np.array_equal(back, arr)
        assert lio.tensor_to_bytes(back) == blob

    def test_matches_numpy_writer(self):
        rng = np.random.default_rng(4)
        for arr in (rng.normal(size=(2, 3)).astype("<f4"),
                    rng.integers(0, 9, 7).astype("<i4"),
                    rng.integers(0, 255, (3, 2)).astype("u1"),
                    rng.normal(size=(4, 1, 2)).astype("<f8")):
            buf = stdio.BytesIO()
            np.save(buf, arr)
            assert lio.tensor_to_bytes(arr) == buf.getvalue()

    def test_numpy_reads_ours_and_back(self, tmp_path):
        arr = np.arange(12, dtype="<f4").reshape(3, 4)
        path = tmp_path / "x.npy"
        lio.write_tensor(arr, path)
        assert np.array_equal(np.load(path), arr)
        np.save(tmp_path / "y.npy", arr)
        assert np.array_equal(lio.read_tensor(tmp_path / "y.npy"), arr)

    def test_header_grammar(self):
        blob = lio.tensor_to_bytes(np.zeros((2, 3), dtype="<f4"))
        header = blob[10:10 + int.from_bytes(blob[8:10], "little")]
        assert b"'shape': (2, 3)" in header
        assert header.endswith(b"\n")
        assert (len(blob) - blob.index(b"\n") - 1) % 4 == 0
        assert lio.tensor_from_bytes(blob).shape == (2, 3)

    def test_zero_dim_rejected(self):
        with pytest.raises(FormatError):
            lio.tensor_to_bytes(np.float32(3.0))

    def test_too_many_dims_rejected(self):
        with pytest.raises(FormatError):
            lio.tensor_to_bytes(np.zeros((1, 1, 1, 1, 1), dtype="<f4"))

    def test_unsupported_dtype(self):
        with pytest.raises(DTypeError):
            lio.tensor_to_bytes(np.zeros(3, dtype=np.int64))

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            lio.tensor_from_bytes(b"NOTNPY\x01\x00" + b"\x00" * 32)

    def test_truncated_payload(self):
        blob = lio.tensor_to_bytes(np.zeros(8, dtype="<f4"))
        with pytest.raises(FormatError):
            lio.tensor_from_bytes(blob[:-4])

    def test_unsupported_descr_in_header(self):
        buf = stdio.BytesIO()
        np.save(buf, np.zeros(3, dtype="<i8"))
        with pytest.raises(DTypeError):
            lio.tensor_from_bytes(buf.getvalue())


class TestPgm:
    def test_endpoints(self):
        blob = lio.pgm_to_bytes(np.array([[0.0, 1.0]]))
        assert blob.startswith(b"P5\n2 1\n65535\n")
        assert blob[-4:] == b"\x00\x00\xff\xff"

    def test_constant_maps_to_zero(self):
        blob = lio.pgm_to_bytes(np.full((2, 2), 3.3))
        assert blob.endswith(b"\x00" * 8)

    def test_matches_reference_scaling(self):
        rng = np.random.default_rng(5)
        img = rng.normal(0, 4, (4, 4))
        assert lio.pgm_to_bytes(img) == pgm_reference_bytes(img)


class TestConfig:
    def test_valid_config(self, tmp_path):
        path = write_config(tmp_path / "c.json", height=64, width=2048,
                            fov_up=3.0, fov_total=28.0)
        cfg = lio.load_config(path)
        assert cfg.sensor.height == 64 and cfg.sensor.width == 2048
        assert cfg.sensor.fov_up == 3.0 and cfg.sensor.fov_total == 28.0
        assert cfg.remap.num_classes == 5
        assert cfg.pipeline.stripe_kernel == (3, 3)

    def test_inverted_fov_is_schema_error(self, tmp_path):
        path = write_config(tmp_path / "c.json", fov_up=30.0, fov_total=28.0)
        with pytest.raises(SchemaError) as err:
            lio.load_config(path)
        assert "sensor" in str(err.value)

    def test_missing_weights_default_to_one(self, tmp_path):
        cfg = lio.load_config(write_config(tmp_path / "c.json"))
        assert all(v == 1.0 for v in cfg.weights.__dict__.values())

    def test_partial_weights(self, tmp_path):
        path = write_config(tmp_path / "c.json", loss_weights={"lambda_B": 0.25})
        cfg = lio.load_config(path)
        assert cfg.weights.lambda_B == 0.25 and cfg.weights.lambda_P == 1.0

    def test_missing_key_named(self, tmp_path):
        doc = {"sensor": {"height": 64, "width": 2048, "fov_up_deg": 3.0}}
        path = tmp_path / "c.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as err:
            lio.load_config(path)
        assert "fov_total_deg" in str(err.value)

    def test_unknown_weight_rejected(self, tmp_path):
        path = write_config(tmp_path / "c.json", loss_weights={"lambda_X": 1.0})
        with pytest.raises(SchemaError):
            lio.load_config(path)

    def test_pipeline_overrides(self, tmp_path):
        path = write_config(tmp_path / "c.json", pipeline={
            "stripe_kernel": [1, 3], "crop_width": 32, "fill_labels": False})
        cfg = lio.load_config(path)
        assert cfg.pipeline.stripe_kernel == (1, 3)
        assert cfg.pipeline.crop_width == 32
        assert cfg.pipeline.fill_labels is False

    def test_bad_remap_value(self, tmp_path):
        path = write_config(tmp_path / "c.json", remap={"10": 99})
        with pytest.raises(SchemaError):
            lio.load_config(path)


class TestRoundTripFuzz:
    def test_hundred_random_fixtures(self):
        rng = np.random.default_rng(6)
        for _ in range(34):
            n = int(rng.integers(0, 64))
            pts = np.concatenate(
                [rng.normal(0, 30, (n, 3)), rng.random((n, 1))], axis=1
            ).astype("<f4").astype(np.float64)
            blob = lio.write_scan_bin(lio.read_scan_bin(
                pts.astype("<f4").tobytes()))
            assert blob == pts.astype("<f4").tobytes()

            sem = rng.integers(0, 0x10000, n)
            inst = rng.integers(0, 0x10000, n)
            lab_blob = lio.write_label_file(sem, inst)
            assert lio.write_label_file(*lio.read_label_raw(lab_blob)) == lab_blob

            dims = tuple(int(rng.integers(1, 6)) for _ in range(int(rng.integers(1, 5))))
            arr = rng.normal(size=dims).astype("<f4")
            assert lio.tensor_to_bytes(lio.tensor_from_bytes(
                lio.tensor_to_bytes(arr))) == lio.tensor_to_bytes(arr)
