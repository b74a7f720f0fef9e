"""Loss kernels of the multi-task objective, as pure array functions.

Every kernel returns a LossResult: the scalar value, the analytic gradient
with respect to the primary prediction argument, and gradients for any
other differentiable array arguments under their parameter names. There is
no autograd graph; each gradient is written out per kernel.

Domain converters are an interface contract only: the conversion terms
(invariance / cycle / mutual) take the already-converted stacks as plain
arrays from any caller-supplied pure mapping, and nothing here implements
or calls the mapping networks themselves.

Log terms clamp probabilities to [CLAMP_EPS, 1 - CLAMP_EPS]; gradients are
defined as zero inside clamped regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary import laplacian_adjoint, laplacian_response
from .core import BoundaryMap, FeatureMatrix, LabelImage, LossWeights
from .errors import AllIgnoredError, EmptyBatchError, ShapeError

CLAMP_EPS = 1e-7


@dataclass(frozen=True, eq=False)
class LossResult:
    """Scalar loss plus gradient(s); `grad` matches the primary input's shape."""

    value: float
    grad: np.ndarray
    aux_grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"loss value is not finite: {self.value}")
        for name, g in [("grad", self.grad), *self.aux_grads.items()]:
            if not np.all(np.isfinite(g)):
                raise ValueError(f"gradient '{name}' contains NaN/Inf")


def _as_array(x) -> np.ndarray:
    if isinstance(x, BoundaryMap):
        return x.values
    if isinstance(x, FeatureMatrix):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _clamped_log_grad(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(clamped values, pass-through mask) for log terms."""
    clamped = np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    inside = (p >= CLAMP_EPS) & (p <= 1.0 - CLAMP_EPS)
    return clamped, inside


# ---------------------------------------------------------------------------
# binary terms

def bce(pred, target, weights=None) -> LossResult:
    """Mean binary cross-entropy with optional per-element weights."""
    p = _as_array(pred)
    t = _as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"pred {p.shape} vs target {t.shape}")
    w = np.ones_like(p) if weights is None else _as_array(weights)
    if w.shape != p.shape:
        raise ShapeError(f"weights {w.shape} vs pred {p.shape}")
    pc, inside = _clamped_log_grad(p)
    n = max(p.size, 1)
    term = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc))
    value = float(np.sum(w * term) / n)
    grad = np.where(inside, w * (pc - t) / (pc * (1.0 - pc)), 0.0) / n
    return LossResult(value=value, grad=grad)


def domain_classification_loss(pred_source, pred_target) -> LossResult:
    """BCE against the domain indicator: source pixels 1, target pixels 0."""
    ps = _as_array(pred_source)
    pt = _as_array(pred_target)
    if ps.size == 0 or pt.size == 0:
        raise EmptyBatchError("both domain batches must be nonempty")
    src = bce(ps, np.ones_like(ps))
    tgt = bce(pt, np.zeros_like(pt))
    return LossResult(value=src.value + tgt.value, grad=src.grad,
                      aux_grads={"pred_target": tgt.grad})


def gan_loss_d(scores_real, scores_fake) -> LossResult:
    """Least-squares discriminator loss: real scores to 1, fake to 0."""
    sr = _as_array(scores_real)
    sf = _as_array(scores_fake)
    if not (np.all(np.isfinite(sr)) and np.all(np.isfinite(sf))):
        raise ValueError("scores must be finite")
    nr = max(sr.size, 1)
    nf = max(sf.size, 1)
    value = float(0.5 * np.sum((sr - 1.0) ** 2) / nr + 0.5 * np.sum(sf ** 2) / nf)
    return LossResult(value=value, grad=(sr - 1.0) / nr,
                      aux_grads={"scores_fake": sf / nf})


def gan_loss_g(scores_fake) -> LossResult:
    """Least-squares generator loss: fake scores to 1."""
    sf = _as_array(scores_fake)
    if not np.all(np.isfinite(sf)):
        raise ValueError("scores must be finite")
    n = max(sf.size, 1)
    value = float(0.5 * np.sum((sf - 1.0) ** 2) / n)
    return LossResult(value=value, grad=(sf - 1.0) / n)


def boundary_loss(pred_b_source, gt_b_source, fake_scores_target, w: LossWeights) -> LossResult:
    """BCE on source boundaries plus a generator term keeping target output alive."""
    bce_part = bce(pred_b_source, gt_b_source)
    gan_part = gan_loss_g(fake_scores_target)
    value = w.lambda_B_BCE * bce_part.value + w.lambda_B_GAN * gan_part.value
    return LossResult(
        value=value, grad=w.lambda_B_BCE * bce_part.grad,
        aux_grads={"fake_scores_target": w.lambda_B_GAN * gan_part.grad},
    )


# ---------------------------------------------------------------------------
# segmentation terms

def _scored_pixels(probs: np.ndarray, labels: LabelImage) -> tuple[np.ndarray, np.ndarray]:
    if probs.ndim != 3 or probs.shape[:2] != labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {labels.shape}")
    if probs.shape[2] < labels.num_classes:
        raise ShapeError(
            f"probs have {probs.shape[2]} classes, labels need {labels.num_classes}")
    lab = labels.labels
    scored = lab > 0
    return lab, scored


def weighted_ce(probs, labels: LabelImage, class_weights=None) -> LossResult:
    """Cross-entropy over non-ignore pixels, optionally class-weighted."""
    p = _as_array(probs)
    lab, scored = _scored_pixels(p, labels)
    if not scored.any():
        raise AllIgnoredError("every pixel carries the ignore label")
    cw = (np.ones(p.shape[2]) if class_weights is None
          else np.asarray(class_weights, dtype=np.float64))
    if cw.shape != (p.shape[2],):
        raise ShapeError(f"class_weights {cw.shape}, expected ({p.shape[2]},)")

    sel = np.nonzero(scored)
    y = lab[sel]
    py = p[sel[0], sel[1], y]
    pc = np.clip(py, CLAMP_EPS, 1.0)
    inside = (py >= CLAMP_EPS) & (py <= 1.0)
    m = y.size
    value = float(np.sum(-cw[y] * np.log(pc)) / m)
    grad = np.zeros_like(p)
    grad[sel[0], sel[1], y] = np.where(inside, -cw[y] / pc, 0.0) / m
    return LossResult(value=value, grad=grad)


def _lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    positives = gt_sorted.sum()
    intersection = positives - np.cumsum(gt_sorted)
    union = positives + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    out = jaccard.copy()
    out[1:] -= jaccard[:-1]
    return out


def lovasz_softmax(probs, labels: LabelImage) -> LossResult:
    """Lovasz extension of the per-class Jaccard loss, averaged over
    classes present among the non-ignore labels.

    Errors sort descending with ties kept in pixel order; the gradient
    flows through the frozen sort permutation.
    """
    p = _as_array(probs)
    lab, scored = _scored_pixels(p, labels)
    if not scored.any():
        raise AllIgnoredError("every pixel carries the ignore label")
    sel = np.nonzero(scored)
    y = lab[sel]
    flat = p[sel]  # (P, C)

    present = np.unique(y)
    total = 0.0
    grad_flat = np.zeros_like(flat)
    for c in present:
        fg = (y == c).astype(np.float64)
        errors = np.where(fg > 0.5, 1.0 - flat[:, c], flat[:, c])
        perm = np.argsort(-errors, kind="stable")
        g = _lovasz_grad(fg[perm])
        total += float(errors[perm] @ g)
        d_err = np.empty_like(g)
        d_err[perm] = g
        grad_flat[:, c] += np.where(fg > 0.5, -d_err, d_err)

    k = len(present)
    grad = np.zeros_like(p)
    grad[sel] = grad_flat / k
    return LossResult(value=total / k, grad=grad)


def dual_boundary_regularizer(probs, labels: LabelImage, pred_b, tau: float = 0.8) -> LossResult:
    """Cross-entropy gated to pixels the boundary head marks (pred_b >= tau)."""
    p = _as_array(probs)
    b = _as_array(pred_b)
    lab, scored = _scored_pixels(p, labels)
    if b.shape != lab.shape:
        raise ShapeError(f"pred_b {b.shape} vs labels {lab.shape}")
    active = scored & (b >= tau)
    if not active.any():
        return LossResult(value=0.0, grad=np.zeros_like(p))
    sel = np.nonzero(active)
    y = lab[sel]
    py = p[sel[0], sel[1], y]
    pc = np.clip(py, CLAMP_EPS, 1.0)
    inside = (py >= CLAMP_EPS) & (py <= 1.0)
    m = y.size
    value = float(np.sum(-np.log(pc)) / m)
    grad = np.zeros_like(p)
    grad[sel[0], sel[1], y] = np.where(inside, -1.0 / pc, 0.0) / m
    return LossResult(value=value, grad=grad)


def seg_loss_source(probs, labels: LabelImage, pred_b, class_weights=None,
                    w_ce: float = 1.0, w_boundary: float = 1.0, w_lovasz: float = 1.0,
                    tau: float = 0.8) -> LossResult:
    """Source segmentation loss: CE + boundary-gated CE + Lovasz-Softmax."""
    ce = weighted_ce(probs, labels, class_weights)
    br = dual_boundary_regularizer(probs, labels, pred_b, tau)
    lv = lovasz_softmax(probs, labels)
    return LossResult(
        value=w_ce * ce.value + w_boundary * br.value + w_lovasz * lv.value,
        grad=w_ce * ce.grad + w_boundary * br.grad + w_lovasz * lv.grad,
    )


def seg_loss_target(probs_t, pred_b_t, fake_scores, w_gan: float = 1.0,
                    w_lap: float = 1.0) -> LossResult:
    """Target segmentation loss: generator GAN term plus L1 agreement between
    the Laplacian edges of the predicted scores and the boundary head."""
    p = _as_array(probs_t)
    b = _as_array(pred_b_t)
    magnitude, lap = laplacian_response(p)
    if b.shape != magnitude.shape:
        raise ShapeError(f"pred_b {b.shape} vs probs {p.shape[:2]}")
    gan = gan_loss_g(fake_scores)
    edge = np.clip(magnitude, 0.0, 1.0)
    diff = edge - b
    n = max(diff.size, 1)
    value = w_gan * gan.value + w_lap * float(np.sum(np.abs(diff)) / n)

    d_edge = w_lap * np.sign(diff) / n
    pass_through = (magnitude > 0.0) & (magnitude < 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(pass_through, d_edge / magnitude, 0.0)
    grad = laplacian_adjoint(scale[..., None] * lap)
    return LossResult(value=value, grad=grad,
                      aux_grads={"fake_scores": w_gan * gan.grad})


# ---------------------------------------------------------------------------
# conversion terms

def _l1_pair(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str):
    if a.shape != b.shape:
        raise ShapeError(f"{name_a} {a.shape} vs {name_b} {b.shape}")
    n = max(a.size, 1)
    value = float(np.sum(np.abs(a - b)) / n)
    g = np.sign(a - b) / n
    return value, g


def invariance_loss(x_s, x_ss, x_t, x_tt) -> LossResult:
    """Converters mapping into a sample's own domain should not change it."""
    xs, xss, xt, xtt = map(_as_array, (x_s, x_ss, x_t, x_tt))
    v1, g1 = _l1_pair(xs, xss, "x_s", "x_ss")
    v2, g2 = _l1_pair(xt, xtt, "x_t", "x_tt")
    return LossResult(value=v1 + v2, grad=g1,
                      aux_grads={"x_ss": -g1, "x_t": g2, "x_tt": -g2})


def cycle_loss(x_s, x_sts, x_t, x_tst) -> LossResult:
    """Round trips through both converters should reproduce the input."""
    xs, xsts, xt, xtst = map(_as_array, (x_s, x_sts, x_t, x_tst))
    v1, g1 = _l1_pair(xs, xsts, "x_s", "x_sts")
    v2, g2 = _l1_pair(xt, xtst, "x_t", "x_tst")
    return LossResult(value=v1 + v2, grad=g1,
                      aux_grads={"x_sts": -g1, "x_t": g2, "x_tst": -g2})


def mutual_conversion_loss(x_s, x_ss, x_sts, x_t, x_tt, x_tst) -> LossResult:
    """Invariance plus cycle consistency over all six stacks."""
    inv = invariance_loss(x_s, x_ss, x_t, x_tt)
    cyc = cycle_loss(x_s, x_sts, x_t, x_tst)
    return LossResult(
        value=inv.value + cyc.value,
        grad=inv.grad + cyc.grad,
        aux_grads={
            "x_ss": inv.aux_grads["x_ss"],
            "x_sts": cyc.aux_grads["x_sts"],
            "x_t": inv.aux_grads["x_t"] + cyc.aux_grads["x_t"],
            "x_tt": inv.aux_grads["x_tt"],
            "x_tst": cyc.aux_grads["x_tst"],
        },
    )


def similarity_loss(feat_orig, feat_conv) -> LossResult:
    """L1 distance between shared features before and after conversion."""
    a = _as_array(feat_orig)
    b = _as_array(feat_conv)
    value, g = _l1_pair(a, b, "feat_orig", "feat_conv")
    return LossResult(value=value, grad=g, aux_grads={"feat_conv": -g})


def difference_loss(hp_s, hc_s, hp_t, hc_t) -> LossResult:
    """Soft subspace orthogonality: squared Frobenius norm of the private/shared
    feature cross-covariance, summed over both domains."""
    hps, hcs, hpt, hct = map(_as_array, (hp_s, hc_s, hp_t, hc_t))
    for name, (a, b) in {"source": (hps, hcs), "target": (hpt, hct)}.items():
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
            raise ShapeError(
                f"{name} features must share row counts, got {a.shape} vs {b.shape}")
    m_s = hps.T @ hcs
    m_t = hpt.T @ hct
    value = float(np.sum(m_s ** 2) + np.sum(m_t ** 2))
    return LossResult(
        value=value, grad=2.0 * hcs @ m_s.T,
        aux_grads={
            "hc_s": 2.0 * hps @ m_s,
            "hp_t": 2.0 * hct @ m_t.T,
            "hc_t": 2.0 * hpt @ m_t,
        },
    )


def total_loss(l_p: float, l_b: float, l_seg: float, l_m: float,
               l_c: float, l_d: float, w: LossWeights) -> float:
    """Weighted sum of the six task losses."""
    return (w.lambda_P * l_p + w.lambda_B * l_b + w.lambda_Seg * l_seg
            + w.lambda_M * l_m + w.lambda_C * l_c + w.lambda_D * l_d)
