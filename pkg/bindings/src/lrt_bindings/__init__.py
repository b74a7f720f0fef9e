"""Flat-array boundary over the lrt toolkit for deep-learning training loops.

Every function takes contiguous row-major buffers plus explicit shape
arguments and returns flat arrays, so callers can hand over framework
tensors (via the buffer protocol) without building lrt domain objects.

Conventions, uniform across the module unless a docstring says otherwise:

* float inputs are float32, id/index inputs are int32, masks are uint8;
  a buffer with any other element type raises TypeError naming the
  expected dtype;
* input buffers are wrapped zero-copy (numpy view over the caller's
  memory); widening to the toolkit's internal float64 is the one explicit
  copy at the boundary;
* float image channels return as float32 (one narrowing copy), loss
  values/gradients return as float64 exactly as the toolkit produced
  them, integer outputs are bit-exact;
* results equal the underlying implementation exactly: the same arrays go
  in, and outputs are returned unmodified (or with the single documented
  cast);
* there is no hidden state between calls, and every function is
  reentrant; long-running array kernels release the interpreter lock
  inside numpy.

Shape/dtype violations raise the standard TypeError/ValueError family
(the toolkit's own error types subclass them) with the toolkit's message
text.
"""

from __future__ import annotations

import numpy as np

import lrt
from lrt import losses as _losses
from lrt import metrics as _metrics
from lrt.core import LabelImage, LossWeights, PointCloud, RangeImageStack, SensorModel
from lrt.projection import project as _project
from lrt.restore import InpaintParams, repair_stack as _repair_stack
from lrt.surface import estimate_normals as _estimate_normals

__version__ = lrt.__version__

_DTYPE_NAMES = {"float32": np.float32, "int32": np.int32, "uint8": np.uint8,
                "int64": np.int64, "float64": np.float64}


def _wrap(buf, dtype_name: str, shape: tuple[int, ...], arg: str) -> np.ndarray:
    """Zero-copy view of a caller buffer, validated against dtype and shape."""
    want = np.dtype(_DTYPE_NAMES[dtype_name])
    if isinstance(buf, np.ndarray):
        if buf.dtype != want:
            raise TypeError(f"{arg}: expected dtype {dtype_name}, got {buf.dtype}")
        if not buf.flags.c_contiguous:
            raise ValueError(f"{arg}: buffer must be C-contiguous row-major")
        arr = buf.reshape(-1)
    else:
        mv = memoryview(buf)
        if mv.itemsize != 1 and mv.format not in (want.char, want.str):
            raise TypeError(f"{arg}: expected dtype {dtype_name}, got format {mv.format!r}")
        arr = np.frombuffer(mv, dtype=want)
    count = int(np.prod(shape)) if shape else arr.size
    if arr.size != count:
        raise ValueError(f"{arg}: buffer holds {arr.size} elements, shape {shape} needs {count}")
    return arr.reshape(shape)


def _stack_from_flat(range_, reflectivity, coords, index, mask, height, width
                     ) -> RangeImageStack:
    h, w = height, width
    return RangeImageStack(
        range=_wrap(range_, "float32", (h, w), "range").astype(np.float64),
        reflectivity=_wrap(reflectivity, "float32", (h, w), "reflectivity").astype(np.float64),
        normals=np.zeros((h, w, 3)),
        coords=_wrap(coords, "float32", (h, w, 3), "coords").astype(np.float64),
        index=_wrap(index, "int32", (h, w), "index"),
        mask=_wrap(mask, "uint8", (h, w), "mask"),
    )


def _stack_to_flat(stack: RangeImageStack) -> dict[str, np.ndarray]:
    return {
        "range": stack.range.astype(np.float32).reshape(-1),
        "reflectivity": stack.reflectivity.astype(np.float32).reshape(-1),
        "normals": stack.normals.astype(np.float32).reshape(-1),
        "coords": stack.coords.astype(np.float32).reshape(-1),
        "index": stack.index.reshape(-1).copy(),
        "mask": stack.mask.reshape(-1).copy(),
    }


# ---------------------------------------------------------------------------
# geometry

def project(points, num_points: int, height: int, width: int,
            fov_up_deg: float, fov_total_deg: float, r_min: float = 1e-3
            ) -> dict[str, np.ndarray]:
    """Spherical projection of float32 (x, y, z, reflectivity) records.

    `points` is a flat float32 buffer of length 4*num_points (zero-copy
    view, widened to float64 internally). Returns flat channels: range,
    reflectivity (float32, h*w), normals, coords (float32, h*w*3), index
    (int32), mask (uint8).
    """
    pts = _wrap(points, "float32", (num_points, 4), "points").astype(np.float64)
    sensor = SensorModel(height=height, width=width, fov_up=fov_up_deg,
                         fov_total=fov_total_deg)
    return _stack_to_flat(_project(PointCloud(points=pts), sensor, r_min=r_min))


def estimate_normals(coords, mask, height: int, width: int) -> np.ndarray:
    """Normal map from a flat float32 coordinate buffer and uint8 validity
    mask; returns flat float32 of length h*w*3."""
    h, w = height, width
    stack = RangeImageStack(
        range=np.linalg.norm(_wrap(coords, "float32", (h, w, 3), "coords")
                             .astype(np.float64), axis=2)
        * _wrap(mask, "uint8", (h, w), "mask"),
        reflectivity=np.zeros((h, w)),
        normals=np.zeros((h, w, 3)),
        coords=_wrap(coords, "float32", (h, w, 3), "coords").astype(np.float64),
        index=np.where(_wrap(mask, "uint8", (h, w), "mask") != 0,
                       0, -1).astype(np.int32),
        mask=_wrap(mask, "uint8", (h, w), "mask"),
    )
    return _estimate_normals(stack).normals.astype(np.float32).reshape(-1)


def repair_stack(range_, reflectivity, coords, index, mask, height: int, width: int,
                 fov_up_deg: float, fov_total_deg: float,
                 labels=None, num_classes: int | None = None,
                 kernel: tuple[int, int] = (3, 3), dt: float = 0.1,
                 diffusion_every: int = 15, max_iters: int = 600,
                 tol: float = 1e-5, fill_labels: bool = True
                 ) -> dict[str, np.ndarray]:
    """Stripe localization + inpainting over flat float32/int32/uint8
    channel buffers. Returns the repaired flat channels plus "stripes"
    (uint8) and, when labels were given, the filled "labels" (int32)."""
    stack = _stack_from_flat(range_, reflectivity, coords, index, mask,
                             height, width)
    sensor = SensorModel(height=height, width=width, fov_up=fov_up_deg,
                         fov_total=fov_total_deg)
    label_img = None
    if labels is not None:
        if num_classes is None:
            raise ValueError("labels require num_classes")
        label_img = LabelImage(
            labels=_wrap(labels, "int32", (height, width), "labels"),
            num_classes=num_classes)
    params = InpaintParams(dt=dt, diffusion_every=diffusion_every,
                           max_iters=max_iters, tol=tol)
    repaired, out_labels, stripes = _repair_stack(
        stack, sensor, labels=label_img, kernel=kernel, params=params,
        fill_labels=fill_labels)
    out = _stack_to_flat(repaired)
    out["stripes"] = stripes.values.reshape(-1).copy()
    if out_labels is not None:
        out["labels"] = out_labels.labels.reshape(-1).copy()
    return out


# ---------------------------------------------------------------------------
# loss kernels: float32 buffers in, (value, grad float64, aux float64) out

def _loss_out(res: _losses.LossResult):
    aux = {k: v.reshape(-1) for k, v in res.aux_grads.items()}
    return res.value, res.grad.reshape(-1), aux


def bce(pred, target, shape: tuple[int, ...], weights=None):
    p = _wrap(pred, "float32", shape, "pred").astype(np.float64)
    t = _wrap(target, "float32", shape, "target").astype(np.float64)
    w = None if weights is None else _wrap(weights, "float32", shape,
                                           "weights").astype(np.float64)
    return _loss_out(_losses.bce(p, t, w))


def domain_classification_loss(pred_source, n_source: int, pred_target, n_target: int):
    ps = _wrap(pred_source, "float32", (n_source,), "pred_source").astype(np.float64)
    pt = _wrap(pred_target, "float32", (n_target,), "pred_target").astype(np.float64)
    return _loss_out(_losses.domain_classification_loss(ps, pt))


def gan_loss_d(scores_real, n_real: int, scores_fake, n_fake: int):
    sr = _wrap(scores_real, "float32", (n_real,), "scores_real").astype(np.float64)
    sf = _wrap(scores_fake, "float32", (n_fake,), "scores_fake").astype(np.float64)
    return _loss_out(_losses.gan_loss_d(sr, sf))


def gan_loss_g(scores_fake, n_fake: int):
    sf = _wrap(scores_fake, "float32", (n_fake,), "scores_fake").astype(np.float64)
    return _loss_out(_losses.gan_loss_g(sf))


def boundary_loss(pred_b, gt_b, height: int, width: int, fake_scores, n_fake: int,
                  lambda_b_bce: float = 1.0, lambda_b_gan: float = 1.0):
    pb = _wrap(pred_b, "float32", (height, width), "pred_b").astype(np.float64)
    gb = _wrap(gt_b, "float32", (height, width), "gt_b").astype(np.float64)
    fs = _wrap(fake_scores, "float32", (n_fake,), "fake_scores").astype(np.float64)
    w = LossWeights(lambda_B_BCE=lambda_b_bce, lambda_B_GAN=lambda_b_gan)
    return _loss_out(_losses.boundary_loss(pb, gb, fs, w))


def _probs_labels(probs, labels, height, width, num_classes):
    p = _wrap(probs, "float32", (height, width, num_classes), "probs").astype(np.float64)
    lab = LabelImage(labels=_wrap(labels, "int32", (height, width), "labels"),
                     num_classes=num_classes)
    return p, lab


def weighted_ce(probs, labels, height: int, width: int, num_classes: int,
                class_weights=None):
    p, lab = _probs_labels(probs, labels, height, width, num_classes)
    cw = None if class_weights is None else _wrap(
        class_weights, "float32", (num_classes,), "class_weights").astype(np.float64)
    return _loss_out(_losses.weighted_ce(p, lab, cw))


def lovasz_softmax(probs, labels, height: int, width: int, num_classes: int):
    p, lab = _probs_labels(probs, labels, height, width, num_classes)
    return _loss_out(_losses.lovasz_softmax(p, lab))


def dual_boundary_regularizer(probs, labels, pred_b, height: int, width: int,
                              num_classes: int, tau: float = 0.8):
    p, lab = _probs_labels(probs, labels, height, width, num_classes)
    pb = _wrap(pred_b, "float32", (height, width), "pred_b").astype(np.float64)
    return _loss_out(_losses.dual_boundary_regularizer(p, lab, pb, tau))


def seg_loss_source(probs, labels, pred_b, height: int, width: int, num_classes: int,
                    class_weights=None, w_ce: float = 1.0, w_boundary: float = 1.0,
                    w_lovasz: float = 1.0, tau: float = 0.8):
    p, lab = _probs_labels(probs, labels, height, width, num_classes)
    pb = _wrap(pred_b, "float32", (height, width), "pred_b").astype(np.float64)
    cw = None if class_weights is None else _wrap(
        class_weights, "float32", (num_classes,), "class_weights").astype(np.float64)
    return _loss_out(_losses.seg_loss_source(p, lab, pb, cw, w_ce=w_ce,
                                             w_boundary=w_boundary,
                                             w_lovasz=w_lovasz, tau=tau))


def seg_loss_target(probs, pred_b, height: int, width: int, num_classes: int,
                    fake_scores, n_fake: int, w_gan: float = 1.0, w_lap: float = 1.0):
    p = _wrap(probs, "float32", (height, width, num_classes), "probs").astype(np.float64)
    pb = _wrap(pred_b, "float32", (height, width), "pred_b").astype(np.float64)
    fs = _wrap(fake_scores, "float32", (n_fake,), "fake_scores").astype(np.float64)
    return _loss_out(_losses.seg_loss_target(p, pb, fs, w_gan=w_gan, w_lap=w_lap))


def _four_stacks(bufs, shape, names):
    return [(_wrap(b, "float32", shape, n).astype(np.float64)) for b, n in zip(bufs, names)]


def invariance_loss(x_s, x_ss, x_t, x_tt, shape: tuple[int, ...]):
    a = _four_stacks((x_s, x_ss, x_t, x_tt), shape, ("x_s", "x_ss", "x_t", "x_tt"))
    return _loss_out(_losses.invariance_loss(*a))


def cycle_loss(x_s, x_sts, x_t, x_tst, shape: tuple[int, ...]):
    a = _four_stacks((x_s, x_sts, x_t, x_tst), shape, ("x_s", "x_sts", "x_t", "x_tst"))
    return _loss_out(_losses.cycle_loss(*a))


def mutual_conversion_loss(x_s, x_ss, x_sts, x_t, x_tt, x_tst, shape: tuple[int, ...]):
    names = ("x_s", "x_ss", "x_sts", "x_t", "x_tt", "x_tst")
    a = [(_wrap(b, "float32", shape, n).astype(np.float64))
         for b, n in zip((x_s, x_ss, x_sts, x_t, x_tt, x_tst), names)]
    return _loss_out(_losses.mutual_conversion_loss(*a))


def similarity_loss(feat_orig, feat_conv, rows: int, cols: int):
    a = _wrap(feat_orig, "float32", (rows, cols), "feat_orig").astype(np.float64)
    b = _wrap(feat_conv, "float32", (rows, cols), "feat_conv").astype(np.float64)
    return _loss_out(_losses.similarity_loss(a, b))


def difference_loss(hp_s, hc_s, n_source: int, dp_s: int, dc_s: int,
                    hp_t, hc_t, n_target: int, dp_t: int, dc_t: int):
    a = _wrap(hp_s, "float32", (n_source, dp_s), "hp_s").astype(np.float64)
    b = _wrap(hc_s, "float32", (n_source, dc_s), "hc_s").astype(np.float64)
    c = _wrap(hp_t, "float32", (n_target, dp_t), "hp_t").astype(np.float64)
    d = _wrap(hc_t, "float32", (n_target, dc_t), "hc_t").astype(np.float64)
    return _loss_out(_losses.difference_loss(a, b, c, d))


def total_loss(l_p: float, l_b: float, l_seg: float, l_m: float, l_c: float,
               l_d: float, lambda_p: float = 1.0, lambda_b: float = 1.0,
               lambda_seg: float = 1.0, lambda_m: float = 1.0,
               lambda_c: float = 1.0, lambda_d: float = 1.0) -> float:
    w = LossWeights(lambda_P=lambda_p, lambda_B=lambda_b, lambda_Seg=lambda_seg,
                    lambda_M=lambda_m, lambda_C=lambda_c, lambda_D=lambda_d)
    return _losses.total_loss(l_p, l_b, l_seg, l_m, l_c, l_d, w)


# ---------------------------------------------------------------------------
# metrics: int32 ids in, int64 counts / float64 IoUs out

def accumulate(counts, gt, pred, n: int, num_classes: int) -> np.ndarray:
    """Add n (gt, pred) int32 pairs into a flat int64 counts buffer
    (C*C, zero-copy view; pass None to start from zeros). Returns a new
    flat int64 counts array; the input buffer is never modified."""
    if counts is None:
        cm = _metrics.ConfusionMatrix.zeros(num_classes)
    else:
        c = _wrap(counts, "int64", (num_classes, num_classes), "counts")
        cm = _metrics.ConfusionMatrix(counts=c)
    g = _wrap(gt, "int32", (n,), "gt")
    p = _wrap(pred, "int32", (n,), "pred")
    return _metrics.accumulate(cm, g, p).counts.reshape(-1).copy()


def iou_report(counts, num_classes: int, zero_absent: bool = False
               ) -> tuple[np.ndarray, float]:
    """Per-class IoU (float64, NaN where absent) and mIoU from flat int64
    counts."""
    c = _wrap(counts, "int64", (num_classes, num_classes), "counts")
    rep = _metrics.iou_report(_metrics.ConfusionMatrix(counts=c),
                              zero_absent=zero_absent)
    return rep.per_class.copy(), rep.miou
