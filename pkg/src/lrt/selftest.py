"""Gradient and oracle self-checks for every loss kernel.

Each kernel's analytic gradient is compared against central finite
differences (step 1e-5) at randomly chosen coordinates. Fixtures are
resampled until every probed coordinate sits safely inside smooth
territory: at least 1e-3 away from clamp boundaries, sort ties, and
absolute-value kinks. Relative error uses |fd - an| / max(|fd|, |an|, 1e-6).

Run via `lrt loss-selftest` or call run_selftest() directly.
"""

from __future__ import annotations

import numpy as np

from . import losses
from .boundary import laplacian_response
from .core import LabelImage, LossWeights
from .metrics import ConfusionMatrix, accumulate, iou_report

FD_STEP = 1e-5
REL_TOL = 1e-4
SAFE_MARGIN = 1.2e-3
_MAX_RESAMPLE = 500


def rel_error(fd: float, an: float) -> float:
    return abs(fd - an) / max(abs(fd), abs(an), 1e-6)


def _fd_max_err(fn, args: tuple, arg_pos: int, aux_name: str | None,
                rng: np.random.Generator, n_points: int, step: float = FD_STEP) -> float:
    """Max relative error of the analytic gradient of args[arg_pos]."""
    result = fn(*args)
    grad = result.grad if aux_name is None else result.aux_grads[aux_name]
    x = np.asarray(args[arg_pos], dtype=np.float64)
    size = x.size
    coords = (rng.permutation(size)[:n_points] if n_points <= size
              else rng.integers(0, size, n_points))

    def value_at(flat: int, offset: float) -> float:
        probe = x.copy()
        probe.flat[flat] += offset
        new_args = list(args)
        new_args[arg_pos] = probe
        return fn(*new_args).value

    worst = 0.0
    for flat in coords:
        fd = (value_at(flat, step) - value_at(flat, -step)) / (2.0 * step)
        worst = max(worst, rel_error(fd, float(grad.flat[flat])))
    return worst


# ---------------------------------------------------------------------------
# fixtures

def _separated(rng: np.random.Generator, a: np.ndarray, shape) -> np.ndarray:
    """Second array of a pair with elementwise |a - b| > SAFE_MARGIN."""
    b = rng.normal(0.0, 1.0, shape)
    for _ in range(_MAX_RESAMPLE):
        close = np.abs(a - b) <= SAFE_MARGIN
        if not close.any():
            return b
        b[close] = rng.normal(0.0, 1.0, int(close.sum()))
    raise RuntimeError("could not separate fixture values")


def _probs(rng: np.random.Generator, h: int, w: int, c: int) -> np.ndarray:
    u = rng.uniform(0.05, 1.0, (h, w, c))
    return u / u.sum(axis=2, keepdims=True)


def _label_image(rng: np.random.Generator, h: int, w: int, c: int) -> LabelImage:
    while True:
        lab = rng.integers(0, c, (h, w))
        if (lab > 0).any():
            return LabelImage(labels=lab.astype(np.int32), num_classes=c)


def _lovasz_fixture(rng: np.random.Generator, h: int = 3, w: int = 4, c: int = 4
                    ) -> tuple[np.ndarray, LabelImage]:
    """Probs/labels whose per-class error values keep sort-safe gaps."""
    for _ in range(_MAX_RESAMPLE):
        p = _probs(rng, h, w, c)
        labels = _label_image(rng, h, w, c)
        lab = labels.labels
        scored = lab > 0
        flat = p[scored]
        y = lab[scored]
        ok = True
        for cls in np.unique(y):
            fg = y == cls
            m = np.where(fg, 1.0 - flat[:, cls], flat[:, cls])
            gaps = np.diff(np.sort(m))
            if gaps.size and gaps.min() <= SAFE_MARGIN:
                ok = False
                break
        if ok:
            return p, labels
    raise RuntimeError("could not build a tie-free fixture")


def _seg_target_fixture(rng: np.random.Generator, h: int = 4, w: int = 5, c: int = 3):
    """Probs/boundary pair clear of the sqrt kink, the clamp, and |.| kinks."""
    for _ in range(_MAX_RESAMPLE):
        p = _probs(rng, h, w, c)
        magnitude, _ = laplacian_response(p)
        if magnitude.min() <= SAFE_MARGIN or np.abs(magnitude - 1.0).min() <= SAFE_MARGIN:
            continue
        edge = np.clip(magnitude, 0.0, 1.0)
        b = rng.uniform(0.0, 1.0, (h, w))
        for _ in range(_MAX_RESAMPLE):
            close = np.abs(edge - b) <= SAFE_MARGIN
            if not close.any():
                break
            b[close] = rng.uniform(0.0, 1.0, int(close.sum()))
        else:
            continue
        fake = rng.normal(0.0, 1.0, 6)
        return p, b, fake
    raise RuntimeError("could not build a kink-free fixture")


# ---------------------------------------------------------------------------
# kernel registry: name -> list of (fn, args, arg_pos, aux_name)

def _gradient_cases(rng: np.random.Generator):
    h, w, c = 4, 5, 4
    pred = rng.uniform(0.01, 0.99, (h, w))
    target = rng.integers(0, 2, (h, w)).astype(np.float64)
    weights = rng.uniform(0.5, 2.0, (h, w))
    yield "bce", losses.bce, (pred, target, weights), [(0, None)]

    ps = rng.uniform(0.01, 0.99, 12)
    pt = rng.uniform(0.01, 0.99, 9)
    yield "domain_classification_loss", losses.domain_classification_loss, (ps, pt), [
        (0, None), (1, "pred_target")]

    sr = rng.normal(0.0, 1.0, 10)
    sf = rng.normal(0.0, 1.0, 8)
    yield "gan_loss_d", losses.gan_loss_d, (sr, sf), [(0, None), (1, "scores_fake")]
    yield "gan_loss_g", losses.gan_loss_g, (sf,), [(0, None)]

    pb = rng.uniform(0.01, 0.99, (h, w))
    gtb = rng.uniform(0.0, 1.0, (h, w))
    fake = rng.normal(0.0, 1.0, 7)
    lw = LossWeights(lambda_B_BCE=0.7, lambda_B_GAN=1.3)
    yield "boundary_loss", losses.boundary_loss, (pb, gtb, fake, lw), [
        (0, None), (2, "fake_scores_target")]

    probs = _probs(rng, h, w, c)
    labels = _label_image(rng, h, w, c)
    cw = rng.uniform(0.5, 2.0, c)
    yield "weighted_ce", losses.weighted_ce, (probs, labels, cw), [(0, None)]

    lp, llab = _lovasz_fixture(rng)
    yield "lovasz_softmax", losses.lovasz_softmax, (lp, llab), [(0, None)]

    gate = rng.uniform(0.0, 1.0, (h, w))
    gate.flat[rng.permutation(gate.size)[: gate.size // 2]] = 0.95
    yield "dual_boundary_regularizer", losses.dual_boundary_regularizer, (
        probs, labels, gate, 0.8), [(0, None)]

    sp, slab = _lovasz_fixture(rng)
    sgate = rng.uniform(0.0, 1.0, (3, 4))
    yield "seg_loss_source", losses.seg_loss_source, (sp, slab, sgate, cw), [(0, None)]

    tp, tb, tfake = _seg_target_fixture(rng)
    yield "seg_loss_target", losses.seg_loss_target, (tp, tb, tfake), [
        (0, None), (2, "fake_scores")]

    shape = (3, 4, 2)
    xs = rng.normal(0.0, 1.0, shape)
    xss = _separated(rng, xs, shape)
    xt = rng.normal(0.0, 1.0, shape)
    xtt = _separated(rng, xt, shape)
    yield "invariance_loss", losses.invariance_loss, (xs, xss, xt, xtt), [
        (0, None), (1, "x_ss"), (2, "x_t"), (3, "x_tt")]

    xsts = _separated(rng, xs, shape)
    xtst = _separated(rng, xt, shape)
    yield "cycle_loss", losses.cycle_loss, (xs, xsts, xt, xtst), [
        (0, None), (1, "x_sts"), (2, "x_t"), (3, "x_tst")]

    yield "mutual_conversion_loss", losses.mutual_conversion_loss, (
        xs, xss, xsts, xt, xtt, xtst), [
        (0, None), (1, "x_ss"), (2, "x_sts"), (3, "x_t"), (4, "x_tt"), (5, "x_tst")]

    fa = rng.normal(0.0, 1.0, (3, 5))
    fb = _separated(rng, fa, (3, 5))
    yield "similarity_loss", losses.similarity_loss, (fa, fb), [(0, None), (1, "feat_conv")]

    hps = rng.normal(0.0, 1.0, (3, 4))
    hcs = rng.normal(0.0, 1.0, (3, 2))
    hpt = rng.normal(0.0, 1.0, (5, 3))
    hct = rng.normal(0.0, 1.0, (5, 4))
    yield "difference_loss", losses.difference_loss, (hps, hcs, hpt, hct), [
        (0, None), (1, "hc_s"), (2, "hp_t"), (3, "hc_t")]


def run_gradient_suite(seed: int = 0, points_per_kernel: int = 100) -> dict:
    """Per-kernel max relative FD error; points split across checked args."""
    rng = np.random.default_rng(seed)
    report = {}
    for name, fn, args, checks in _gradient_cases(rng):
        per_arg = max(1, points_per_kernel // len(checks))
        worst = 0.0
        for arg_pos, aux_name in checks:
            worst = max(worst, _fd_max_err(fn, args, arg_pos, aux_name, rng, per_arg))
        report[name] = {"max_rel_err": worst, "passed": bool(worst < REL_TOL)}
    return report


# ---------------------------------------------------------------------------
# value oracles

def jaccard_loss_hard(probs: np.ndarray, labels: LabelImage) -> float:
    """Brute-force mean (1 - IoU_c) over classes present in the labels,
    for hard one-hot predictions; the independent check for lovasz_softmax."""
    lab = labels.labels
    scored = lab > 0
    pred = probs.argmax(axis=2)
    total = 0.0
    present = np.unique(lab[scored])
    for c in present:
        gt_c = (lab == c) & scored
        pd_c = (pred == c) & scored
        inter = float(np.sum(gt_c & pd_c))
        union = float(np.sum(gt_c | pd_c))
        total += 1.0 - (inter / union if union else 1.0)
    return total / len(present)


def _one_hot(pred: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros(pred.shape + (c,))
    rr, cc = np.meshgrid(np.arange(pred.shape[0]), np.arange(pred.shape[1]), indexing="ij")
    out[rr, cc, pred] = 1.0
    return out


def run_oracles(seed: int = 0, cases: int = 100) -> dict:
    rng = np.random.default_rng(seed)
    report = {}

    worst = 0.0
    for _ in range(cases):
        c = 4
        lab = rng.integers(0, c, (3, 4)).astype(np.int32)
        if not (lab > 0).any():
            continue
        labels = LabelImage(labels=lab, num_classes=c)
        pred = rng.integers(1, c, (3, 4))
        probs = _one_hot(pred, c)
        got = losses.lovasz_softmax(probs, labels).value
        want = jaccard_loss_hard(probs, labels)
        worst = max(worst, abs(got - want))
    report["lovasz_vs_jaccard"] = {"max_abs_err": worst, "passed": bool(worst < 1e-9)}

    # Doubling every weight must exactly double the total (binary-exact scaling).
    comps = rng.normal(0.0, 1.0, 6)
    lw = LossWeights(*rng.uniform(0.1, 2.0, 8))
    doubled = LossWeights(**{k: 2.0 * v for k, v in lw.__dict__.items()})
    base = losses.total_loss(*comps, lw)
    exact = losses.total_loss(*comps, doubled) == 2.0 * base
    report["total_loss_scaling"] = {"passed": bool(exact)}

    cm = ConfusionMatrix.zeros(5)
    gt = rng.integers(0, 5, 400)
    pd = rng.integers(0, 5, 400)
    cm = accumulate(cm, gt, pd)
    naive = np.zeros((5, 5), dtype=np.int64)
    for g, p in zip(gt, pd):
        if g != 0:
            naive[g, p] += 1
    ok = bool(np.array_equal(cm.counts, naive))
    if ok:
        rep = iou_report(cm)
        ok = 0.0 <= rep.miou <= 1.0
    report["confusion_tally"] = {"passed": ok}
    return report


def run_selftest(seed: int = 0, points_per_kernel: int = 100) -> dict:
    kernels = run_gradient_suite(seed, points_per_kernel)
    oracles = run_oracles(seed)
    passed = all(entry["passed"] for entry in kernels.values()) and \
        all(entry["passed"] for entry in oracles.values())
    return {"seed": seed, "points_per_kernel": points_per_kernel,
            "kernels": kernels, "oracles": oracles, "passed": passed}
