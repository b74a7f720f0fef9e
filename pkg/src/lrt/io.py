"""Readers/writers for scan, label, tensor, and preview formats, plus config.

Formats:
  scan ".bin"    -- consecutive 16-byte records of little-endian float32
                    (x, y, z, remission)
  label ".label" -- little-endian uint32 per point; low 16 bits semantic id,
                    high 16 bits instance id
  tensor ".npy"  -- NPY version 1.0 container, dtypes f4/f8/i4/u1, 1..4 dims
  preview ".pgm" -- binary P5, 16-bit big-endian samples
  config ".json" -- sensor + label remap + loss weights + pipeline parameters

All codecs are pure functions over byte strings; the path-taking wrappers
just add file handling.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LossWeights, PointCloud, SensorModel
from .errors import (
    DecodeError,
    DegenerateSensorError,
    DTypeError,
    FormatError,
    LengthError,
    SchemaError,
)

SCAN_RECORD_BYTES = 16
_NPY_MAGIC = b"\x93NUMPY"
_NPY_VERSION = b"\x01\x00"
_NPY_ALIGN = 64
_SUPPORTED_DESCRS = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"),
                     "<i4": np.dtype("<i4"), "|u1": np.dtype("u1")}


# ---------------------------------------------------------------------------
# scan records

def read_scan_bin(data: bytes) -> PointCloud:
    """Decode 16-byte (x, y, z, remission) float32 records.

    Remission is clamped to [0, 1]; raises LengthError on partial records
    and DecodeError on NaN/Inf payloads.
    """
    if len(data) % SCAN_RECORD_BYTES != 0:
        raise LengthError(
            f"scan stream is {len(data)} bytes, not a multiple of {SCAN_RECORD_BYTES}"
        )
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(raw)):
        raise DecodeError("scan stream contains NaN/Inf values")
    pts = raw.astype(np.float64)
    np.clip(pts[:, 3], 0.0, 1.0, out=pts[:, 3])
    return PointCloud(points=pts)


def write_scan_bin(cloud: PointCloud) -> bytes:
    """Encode a cloud back to the 16-byte float32 record stream."""
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# label records

@dataclass(frozen=True)
class LabelRemap:
    """Raw semantic id -> training class id in [0, num_classes).

    Unmapped raw ids fall through to class 0 (ignore).
    """

    table: dict[int, int]
    num_classes: int
    _lookup: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        lookup = np.zeros(0x10000, dtype=np.int32)
        for raw, cls in self.table.items():
            if not (0 <= raw <= 0xFFFF):
                raise ValueError(f"raw id {raw} outside 16-bit semantic range")
            if not (0 <= cls < self.num_classes):
                raise ValueError(f"mapped class {cls} outside [0, {self.num_classes})")
            lookup[raw] = cls
        lookup.flags.writeable = False
        object.__setattr__(self, "_lookup", lookup)

    def apply(self, raw_ids: np.ndarray) -> np.ndarray:
        return self._lookup[np.asarray(raw_ids, dtype=np.int64)]


def read_label_raw(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Split each uint32 into (semantic = v & 0xFFFF, instance = v >> 16)."""
    if len(data) % 4 != 0:
        raise LengthError(f"label stream is {len(data)} bytes, not a multiple of 4")
    values = np.frombuffer(data, dtype="<u4")
    semantic = (values & np.uint32(0xFFFF)).astype(np.int32)
    instance = (values >> np.uint32(16)).astype(np.int32)
    return semantic, instance


def write_label_file(semantic: np.ndarray, instance: np.ndarray | None = None) -> bytes:
    """Pack per-point ids as v = semantic | (instance << 16)."""
    sem = np.asarray(semantic, dtype=np.uint32)
    inst = (np.zeros_like(sem) if instance is None
            else np.asarray(instance, dtype=np.uint32))
    if sem.shape != inst.shape:
        raise LengthError(f"semantic shape {sem.shape} != instance shape {inst.shape}")
    packed = ((sem & np.uint32(0xFFFF)) | (inst << np.uint32(16))).astype("<u4")
    return packed.tobytes()


def read_label_file(data: bytes, remap: LabelRemap, count: int) -> np.ndarray:
    """Per-point training class ids; instance ids are discarded."""
    if len(data) != 4 * count:
        raise LengthError(f"label stream is {len(data)} bytes, expected {4 * count}")
    semantic, _ = read_label_raw(data)
    return remap.apply(semantic)


# ---------------------------------------------------------------------------
# NPY v1.0 tensors

def _descr_for(dtype: np.dtype) -> str:
    for descr, dt in _SUPPORTED_DESCRS.items():
        if dtype == dt:
            return descr
    raise DTypeError(f"unsupported element type {dtype}; supported: f4, f8, i4, u1")


def tensor_to_bytes(values: np.ndarray) -> bytes:
    """Serialize as an NPY v1.0 container (row-major little-endian payload)."""
    arr = np.asarray(values)
    if arr.ndim == 0:
        raise FormatError("0-dimensional arrays are not supported")
    if arr.ndim > 4:
        raise FormatError(f"arrays above 4 dimensions are not supported, got {arr.ndim}")
    descr = _descr_for(arr.dtype)
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr, repr(arr.shape))
    # Pad with spaces so magic+version+length+header is 64-byte aligned,
    # with a final newline, exactly as the v1.0 container specifies.
    base = len(_NPY_MAGIC) + len(_NPY_VERSION) + 2
    total = base + len(header) + 1
    padded = -total % _NPY_ALIGN
    header = header + " " * padded + "\n"
    if len(header) > 0xFFFF:
        raise FormatError("header too long for NPY v1.0")
    out = bytearray()
    out += _NPY_MAGIC
    out += _NPY_VERSION
    out += len(header).to_bytes(2, "little")
    out += header.encode("latin1")
    out += np.ascontiguousarray(arr, dtype=_SUPPORTED_DESCRS[descr]).tobytes()
    return bytes(out)


def tensor_from_bytes(data: bytes) -> np.ndarray:
    """Exact inverse of tensor_to_bytes."""
    if data[: len(_NPY_MAGIC)] != _NPY_MAGIC:
        raise FormatError("bad magic string, not an NPY container")
    pos = len(_NPY_MAGIC)
    if data[pos:pos + 2] != _NPY_VERSION:
        raise FormatError(f"unsupported NPY version {data[pos]}.{data[pos + 1]}")
    pos += 2
    if len(data) < pos + 2:
        raise FormatError("truncated header length field")
    hlen = int.from_bytes(data[pos:pos + 2], "little")
    pos += 2
    header_bytes = data[pos:pos + hlen]
    if len(header_bytes) != hlen:
        raise FormatError("truncated header")
    pos += hlen
    try:
        header = ast.literal_eval(header_bytes.decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unparseable header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"header keys {sorted(header) if isinstance(header, dict) else header}")
    if header["fortran_order"] is not False:
        raise FormatError("fortran_order=True is not supported")
    descr = header["descr"]
    if descr not in _SUPPORTED_DESCRS:
        raise DTypeError(f"unsupported element descriptor {descr!r}; supported: f4, f8, i4, u1")
    shape = header["shape"]
    if (not isinstance(shape, tuple) or not shape or len(shape) > 4
            or not all(isinstance(d, int) and d >= 0 for d in shape)):
        raise FormatError(f"bad shape field {shape!r}")
    dtype = _SUPPORTED_DESCRS[descr]
    nbytes = int(np.prod(shape)) * dtype.itemsize
    payload = data[pos:pos + nbytes]
    if len(payload) != nbytes:
        raise FormatError(f"payload is {len(payload)} bytes, expected {nbytes}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def write_tensor(values: np.ndarray, path) -> None:
    Path(path).write_bytes(tensor_to_bytes(values))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# preview images

def pgm_to_bytes(image: np.ndarray) -> bytes:
    """Binary PGM (P5), 16-bit big-endian samples.

    Scaling law: sample = round_half_even((x - min) * (65535 / (max - min)));
    constant images map to all-zero samples.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise FormatError(f"preview image must be 2-D, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("preview image contains NaN/Inf")
    h, w = img.shape
    lo, hi = img.min(), img.max()
    if hi > lo:
        samples = np.round((img - lo) * (65535.0 / (hi - lo))).astype(">u2")
    else:
        samples = np.zeros((h, w), dtype=">u2")
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + samples.tobytes()


def write_preview_pgm(image: np.ndarray, path) -> None:
    Path(path).write_bytes(pgm_to_bytes(image))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class PipelineParams:
    """Knobs for the projection/repair pipeline, with documented defaults."""

    r_min: float = 1e-3
    stripe_kernel: tuple[int, int] = (3, 3)
    inpaint_dt: float = 0.1
    inpaint_diffusion_every: int = 15
    inpaint_max_iters: int = 600
    inpaint_tol: float = 1e-5
    fill_labels: bool = True
    crop_width: int | None = None
    boundary_tau: float = 0.8
    class_weights: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Config:
    sensor: SensorModel
    remap: LabelRemap
    weights: LossWeights
    pipeline: PipelineParams


def _require(section: dict, section_name: str, key: str, types) -> object:
    if key not in section:
        raise SchemaError(f"{section_name}.{key}", "missing required key")
    value = section[key]
    if not isinstance(value, types) or isinstance(value, bool) and types != bool:
        raise SchemaError(f"{section_name}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def parse_config(doc: dict) -> Config:
    """Validate a loaded JSON document against the config schema."""
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "config document must be a JSON object")

    sensor_doc = _require(doc, "<root>", "sensor", dict)
    height = _require(sensor_doc, "sensor", "height", int)
    width = _require(sensor_doc, "sensor", "width", int)
    fov_up = float(_require(sensor_doc, "sensor", "fov_up_deg", (int, float)))
    fov_total = float(_require(sensor_doc, "sensor", "fov_total_deg", (int, float)))
    name = sensor_doc.get("name", "sensor")
    if not isinstance(name, str):
        raise SchemaError("sensor.name", "expected string")
    try:
        sensor = SensorModel(height=height, width=width, fov_up=fov_up,
                             fov_total=fov_total, name=name)
    except DegenerateSensorError as exc:
        raise SchemaError("sensor", str(exc)) from exc

    labels_doc = _require(doc, "<root>", "labels", dict)
    num_classes = _require(labels_doc, "labels", "num_classes", int)
    remap_doc = _require(labels_doc, "labels", "remap", dict)
    table = {}
    for raw_key, cls in remap_doc.items():
        try:
            raw = int(raw_key)
        except ValueError:
            raise SchemaError(f"labels.remap.{raw_key}", "key must be an integer id") from None
        if not isinstance(cls, int) or isinstance(cls, bool):
            raise SchemaError(f"labels.remap.{raw_key}", "value must be an integer class")
        table[raw] = cls
    try:
        remap = LabelRemap(table=table, num_classes=num_classes)
    except ValueError as exc:
        raise SchemaError("labels.remap", str(exc)) from exc

    weights_doc = doc.get("loss_weights", {})
    if not isinstance(weights_doc, dict):
        raise SchemaError("loss_weights", "expected object")
    known = set(LossWeights().__dict__)
    for key, value in weights_doc.items():
        if key not in known:
            raise SchemaError(f"loss_weights.{key}", "unknown weight name")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"loss_weights.{key}", "expected number")
    try:
        weights = LossWeights(**{k: float(v) for k, v in weights_doc.items()})
    except ValueError as exc:
        raise SchemaError("loss_weights", str(exc)) from exc

    pipe_doc = doc.get("pipeline", {})
    if not isinstance(pipe_doc, dict):
        raise SchemaError("pipeline", "expected object")
    defaults = PipelineParams()
    kwargs = {}
    scalar_fields = {
        "r_min": float, "inpaint_dt": float, "inpaint_tol": float,
        "boundary_tau": float, "inpaint_diffusion_every": int,
        "inpaint_max_iters": int, "fill_labels": bool,
    }
    for key, caster in scalar_fields.items():
        if key in pipe_doc:
            value = pipe_doc[key]
            if caster is bool:
                if not isinstance(value, bool):
                    raise SchemaError(f"pipeline.{key}", "expected boolean")
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"pipeline.{key}", "expected number")
            kwargs[key] = caster(value)
    if "stripe_kernel" in pipe_doc:
        kernel = pipe_doc["stripe_kernel"]
        if (not isinstance(kernel, list) or len(kernel) != 2
                or not all(isinstance(k, int) and not isinstance(k, bool) for k in kernel)):
            raise SchemaError("pipeline.stripe_kernel", "expected [k_h, k_w] integers")
        kwargs["stripe_kernel"] = (kernel[0], kernel[1])
    if "crop_width" in pipe_doc and pipe_doc["crop_width"] is not None:
        cw = pipe_doc["crop_width"]
        if not isinstance(cw, int) or isinstance(cw, bool) or cw < 1:
            raise SchemaError("pipeline.crop_width", "expected positive integer or null")
        if cw > sensor.width:
            raise SchemaError("pipeline.crop_width", f"crop {cw} wider than image {sensor.width}")
        kwargs["crop_width"] = cw
    if "class_weights" in pipe_doc and pipe_doc["class_weights"] is not None:
        cw = pipe_doc["class_weights"]
        if (not isinstance(cw, list) or len(cw) != num_classes
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in cw)):
            raise SchemaError("pipeline.class_weights",
                              f"expected {num_classes} numbers (one per class)")
        kwargs["class_weights"] = tuple(float(v) for v in cw)
    unknown = set(pipe_doc) - set(defaults.__dict__)
    if unknown:
        raise SchemaError(f"pipeline.{sorted(unknown)[0]}", "unknown key")
    pipeline = PipelineParams(**kwargs)

    return Config(sensor=sensor, remap=remap, weights=weights, pipeline=pipeline)


def load_config(path) -> Config:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc}") from exc
    return parse_config(doc)
