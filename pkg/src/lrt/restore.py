"""Stripe-artifact localization and repair.

Pipeline: a morphological closing of the validity mask minus the mask
itself marks 1-pixel beam dropouts; range and reflectivity are filled by
transport-of-smoothness inpainting (smoothness moves along isophotes, with
anisotropic-diffusion interludes); labels are filled from their nearest
valid pixel.

Nearest-valid lookups use the chamfer path metric (axial step 1, diagonal
step sqrt(2)) without azimuthal wrap, distance ties broken by the smaller
(row, col) source. The inpainting stencils do wrap horizontally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LabelImage, RangeImageStack, SensorModel
from .errors import KernelError, MaskOverlapError, NoValidPixelError
from .projection import pixel_rays

SQRT2 = math.sqrt(2.0)

_AXIAL = ((-1, 0), (0, -1), (0, 1), (1, 0))        # lex order of source coords
_DIAGONAL = ((-1, -1), (-1, 1), (1, -1), (1, 1))
_ALL8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True, eq=False)
class StripeMask:
    """Binary map of pixels scheduled for repair; disjoint from the valid mask."""

    values: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values) != 0, dtype=np.uint8)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def as_bool(self) -> np.ndarray:
        return self.values.astype(bool)

    @property
    def count(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class InpaintParams:
    dt: float = 0.1
    diffusion_every: int = 15
    max_iters: int = 600
    tol: float = 1e-5


# ---------------------------------------------------------------------------
# morphology

def _filter_1d(arr: np.ndarray, k: int, axis: int, pad_value: bool, take_max: bool) -> np.ndarray:
    if k == 1:
        return arr.copy()
    half = k // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (half, half)
    padded = np.pad(arr, pad, constant_values=pad_value)
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=axis)
    return windows.max(axis=-1) if take_max else windows.min(axis=-1)


def _check_kernel(kernel: tuple[int, int]) -> tuple[int, int]:
    kh, kw = kernel
    for k in (kh, kw):
        if k < 1 or k % 2 == 0:
            raise KernelError(f"structuring element sides must be odd and >= 1, got {kernel}")
    return kh, kw


def dilate(mask: np.ndarray, kernel: tuple[int, int] = (3, 3)) -> np.ndarray:
    """Binary dilation by an all-ones k_h x k_w element; border acts as 0."""
    kh, kw = _check_kernel(kernel)
    m = np.asarray(mask) != 0
    return _filter_1d(_filter_1d(m, kh, 0, False, True), kw, 1, False, True)


def erode(mask: np.ndarray, kernel: tuple[int, int] = (3, 3)) -> np.ndarray:
    """Binary erosion by an all-ones k_h x k_w element; border acts as 1."""
    kh, kw = _check_kernel(kernel)
    m = np.asarray(mask) != 0
    return _filter_1d(_filter_1d(m, kh, 0, True, False), kw, 1, True, False)


def locate_stripes(mask: np.ndarray, kernel: tuple[int, int] = (3, 3)) -> StripeMask:
    """Closing minus the mask: gaps narrower than the element get marked."""
    m = np.asarray(mask) != 0
    closing = erode(dilate(m, kernel), kernel)
    return StripeMask(values=(closing & ~m).astype(np.uint8))


# ---------------------------------------------------------------------------
# nearest-valid sources

def _chamfer(dr: np.ndarray, dc: np.ndarray) -> np.ndarray:
    adr = np.abs(dr)
    adc = np.abs(dc)
    lo = np.minimum(adr, adc)
    hi = np.maximum(adr, adc)
    return (hi - lo) + lo * SQRT2


def nearest_valid_sources(valid: np.ndarray, targets: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """For each target pixel, its nearest valid pixel under the chamfer metric.

    Ties resolve to the lexicographically smallest (row, col) source.
    Returns (target_rows, target_cols, source_rows, source_cols).
    """
    valid = np.asarray(valid).astype(bool)
    targets = np.asarray(targets).astype(bool)
    if not valid.any():
        raise NoValidPixelError("no valid pixel to copy from")
    h, w = valid.shape
    tr, tc = np.nonzero(targets)
    n = tr.size
    sr = np.empty(n, dtype=np.int64)
    sc = np.empty(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)

    self_valid = valid[tr, tc]
    sr[self_valid] = tr[self_valid]
    sc[self_valid] = tc[self_valid]
    done |= self_valid

    # Unit-distance ties all resolve inside one ring, so scanning offsets in
    # source-lex order and keeping the first valid hit is exact.
    for ring in (_AXIAL, _DIAGONAL):
        for dr_, dc_ in ring:
            if done.all():
                break
            nr = tr + dr_
            nc = tc + dc_
            cand = np.nonzero(~done & (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w))[0]
            if cand.size == 0:
                continue
            hit = cand[valid[nr[cand], nc[cand]]]
            sr[hit] = nr[hit]
            sc[hit] = nc[hit]
            done[hit] = True

    for i in np.nonzero(~done)[0]:
        r, c = int(tr[i]), int(tc[i])
        radius = 2
        while True:
            r0, r1 = max(0, r - radius), min(h, r + radius + 1)
            c0, c1 = max(0, c - radius), min(w, c + radius + 1)
            sub = valid[r0:r1, c0:c1]
            vr, vc = np.nonzero(sub)
            if vr.size:
                d = _chamfer(vr + r0 - r, vc + c0 - c)
                dmin = d.min()
                if dmin <= radius or (r0 == 0 and r1 == h and c0 == 0 and c1 == w):
                    best = np.nonzero(d == dmin)[0][0]  # row-major => lex smallest
                    sr[i] = vr[best] + r0
                    sc[i] = vc[best] + c0
                    break
                radius = max(radius * 2, int(math.ceil(dmin)))
            else:
                radius *= 2
    return tr, tc, sr, sc


def fill_labels_nn(labels: LabelImage, repair: StripeMask | np.ndarray,
                   valid: np.ndarray) -> LabelImage:
    """Give each repair pixel the label of its nearest labeled valid pixel.

    Sources are valid pixels carrying a non-ignore label; if none carry one,
    plain valid pixels are used (the fill then stays ignore). Valid pixels
    are never modified.
    """
    rep = repair.as_bool() if isinstance(repair, StripeMask) else np.asarray(repair).astype(bool)
    val = np.asarray(valid).astype(bool)
    if not val.any():
        raise NoValidPixelError("label fill needs at least one valid pixel")
    lab = labels.labels
    sources = val & (lab != 0)
    if not sources.any():
        sources = val
    tr, tc, sr, sc = nearest_valid_sources(sources, rep)
    out = lab.copy()
    out[tr, tc] = lab[sr, sc]
    return LabelImage(labels=out, num_classes=labels.num_classes)


# ---------------------------------------------------------------------------
# repair-region connectivity (8-connected, horizontal wrap)

def _repair_components(repair: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 8-connected components of the repair mask; columns wrap."""
    h, w = repair.shape
    run_of = np.full((h, w), -1, dtype=np.int64)
    n_runs = 0
    row_first_last: list[tuple[int, int] | None] = []
    for r in range(h):
        row = repair[r]
        starts = row & ~np.concatenate(([False], row[:-1]))
        ids = np.cumsum(starts) - 1
        count = int(starts.sum())
        run_of[r, row] = ids[row] + n_runs
        if count and row[0] and row[-1] and count > 1:
            row_first_last.append((n_runs, n_runs + count - 1))
        else:
            row_first_last.append(None)
        n_runs += count

    parent = np.arange(n_runs, dtype=np.int64)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for pair in row_first_last:
        if pair is not None:
            union(*pair)  # azimuthal wrap joins the row's first and last runs

    for r in range(h - 1):
        a = run_of[r]
        for dc in (-1, 0, 1):
            b = np.roll(run_of[r + 1], -dc)
            both = (a >= 0) & (b >= 0)
            if both.any():
                pairs = np.unique(np.stack([a[both], b[both]]), axis=1)
                for pa, pb in pairs.T:
                    union(int(pa), int(pb))

    roots = np.array([find(i) for i in range(n_runs)], dtype=np.int64)
    uniq, compact = np.unique(roots, return_inverse=True)
    comp = np.full((h, w), -1, dtype=np.int64)
    inside = run_of >= 0
    comp[inside] = compact[run_of[inside]]
    return comp, uniq.size


def _component_bounds(comp: np.ndarray, n_comps: int, valid: np.ndarray,
                      image: np.ndarray, init: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Value range of each component's ring of valid 8-neighbors (wrap).

    Components whose ring is empty fall back to the range of their own
    initialization values.
    """
    h, w = comp.shape
    lo = np.full(n_comps, np.inf)
    hi = np.full(n_comps, -np.inf)
    rr, cc = np.nonzero(comp >= 0)
    ids = comp[rr, cc]
    for dr_, dc_ in _ALL8:
        nr = rr + dr_
        inb = (nr >= 0) & (nr < h)
        nc = (cc + dc_) % w
        sel = np.nonzero(inb)[0]
        sel = sel[valid[nr[sel], nc[sel]]]
        if sel.size:
            vals = image[nr[sel], nc[sel]]
            np.minimum.at(lo, ids[sel], vals)
            np.maximum.at(hi, ids[sel], vals)
    empty = ~np.isfinite(lo)
    if empty.any():
        np.minimum.at(lo, ids, np.where(empty[ids], init[rr, cc], np.inf))
        np.maximum.at(hi, ids, np.where(empty[ids], init[rr, cc], -np.inf))
    return lo, hi


# ---------------------------------------------------------------------------
# inpainting

def _dilate_wrap(mask: np.ndarray, radius: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(radius):
        smear = out | np.roll(out, 1, axis=1) | np.roll(out, -1, axis=1)
        grown = smear.copy()
        grown[1:] |= smear[:-1]
        grown[:-1] |= smear[1:]
        out = grown
    return out


def _shift_up(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    out[1:] = a[:-1]
    out[0] = a[0]
    return out


def _shift_down(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    out[:-1] = a[1:]
    out[-1] = a[-1]
    return out


def inpaint_ns(image: np.ndarray, repair: StripeMask | np.ndarray,
               params: InpaintParams | None = None, valid: np.ndarray | None = None,
               diagnostics: dict | None = None) -> np.ndarray:
    """Fill repair pixels by transporting smoothness along isophotes.

    Repair pixels start at their nearest valid value, then iterate
      I <- I + dt * (grad(lap I) . perp-grad I / |grad I|)
    with central differences (columns wrap), one anisotropic-diffusion
    relaxation every `diffusion_every` transport steps, and a per-component
    clamp to the surrounding ring's value range (monotone scheme).
    Convergence is checked at diffusion steps: max per-pixel update
    <= tol * (dynamic range of valid pixels). Pixels outside the repair
    mask are returned bit-exactly unchanged.
    """
    params = params or InpaintParams()
    img = np.asarray(image, dtype=np.float64)
    rep = repair.as_bool() if isinstance(repair, StripeMask) else np.asarray(repair).astype(bool)
    if img.shape != rep.shape:
        raise MaskOverlapError(f"image {img.shape} vs repair {rep.shape} shape mismatch")
    val = ~rep if valid is None else np.asarray(valid).astype(bool)
    if (rep & val).any():
        raise MaskOverlapError("repair mask overlaps the valid mask")

    out = img.copy()
    if not rep.any():
        if diagnostics is not None:
            diagnostics.update(iterations=0, residuals=[])
        return out

    # Nearest-valid initialization; pixels that are neither valid nor
    # repaired but sit inside the stencil support get a backdrop fill that
    # only feeds derivatives, never the output.
    fill = rep | (_dilate_wrap(rep, 2) & ~val & ~rep)
    tr, tc, sr, sc = nearest_valid_sources(val, fill)
    work = img.copy()
    work[tr, tc] = img[sr, sc]
    init = work.copy()

    comp, n_comps = _repair_components(rep)
    lo_c, hi_c = _component_bounds(comp, n_comps, val, img, init)
    rep_idx = np.nonzero(rep)
    rep_comp = comp[rep_idx]
    lo = lo_c[rep_comp]
    hi = hi_c[rep_comp]

    vals_valid = img[val]
    vrange = float(vals_valid.max() - vals_valid.min()) if vals_valid.size else 0.0
    threshold = params.tol * vrange
    k_diff = 0.1 * vrange + 1e-30
    grad_floor = 1e-9 * max(vrange, 1.0)

    residuals: list[float] = []
    iterations = 0
    for k in range(1, params.max_iters + 1):
        iterations = k
        before = work[rep_idx]

        left = np.roll(work, 1, axis=1)
        right = np.roll(work, -1, axis=1)
        up = _shift_up(work)
        down = _shift_down(work)
        lap = left + right + up + down - 4.0 * work
        i_x = 0.5 * (right - left)
        i_y = 0.5 * (down - up)
        mag = np.maximum(np.sqrt(i_x * i_x + i_y * i_y), grad_floor)
        b_x = -i_y / mag
        b_y = i_x / mag
        # Upwind differences of the transported smoothness: the centered
        # form cannot see the hole's own value (odd stencil cancels), so it
        # has no fixed point on 1-pixel holes; one-sided differences chosen
        # by the advection direction restore contraction.
        lap_x = np.where(b_x > 0.0, lap - np.roll(lap, 1, axis=1),
                         np.roll(lap, -1, axis=1) - lap)
        lap_y = np.where(b_y > 0.0, lap - _shift_up(lap), _shift_down(lap) - lap)
        advect = lap_x * b_x + lap_y * b_y
        new_vals = np.clip(before + params.dt * advect[rep_idx], lo, hi)
        work[rep_idx] = new_vals

        diffused = (k - 1) % params.diffusion_every == 0
        if diffused:
            left = np.roll(work, 1, axis=1)
            right = np.roll(work, -1, axis=1)
            up = _shift_up(work)
            down = _shift_down(work)
            total = np.zeros_like(work)
            weight = np.zeros_like(work)
            for nb in (left, right, up, down):
                d = nb - work
                g = 1.0 / (1.0 + (d / k_diff) ** 2)
                total += g * d
                weight += g
            new_vals = np.clip(work[rep_idx] + (total / weight)[rep_idx], lo, hi)
            work[rep_idx] = new_vals

            residual = float(np.max(np.abs(new_vals - before))) if new_vals.size else 0.0
            residuals.append(residual)
            if residual <= threshold:
                break

    if diagnostics is not None:
        diagnostics.update(iterations=iterations, residuals=residuals)
    out[rep_idx] = work[rep_idx]
    return out


# ---------------------------------------------------------------------------
# composition

def repair_stack(stack: RangeImageStack, sensor: SensorModel,
                 labels: LabelImage | None = None,
                 kernel: tuple[int, int] = (3, 3),
                 params: InpaintParams | None = None,
                 fill_labels: bool = True,
                 ) -> tuple[RangeImageStack, LabelImage | None, StripeMask]:
    """Locate stripes, inpaint range/reflectivity, resynthesize coordinates.

    Repaired pixels become valid (mask=1) but keep index=-1: there is no
    real return behind them. Their coordinates lie on the pixel-center ray
    at the inpainted range, and their normals are reset to zero so a later
    normal pass treats them like any other valid pixel.
    """
    stripes = locate_stripes(stack.mask, kernel)
    if stripes.count == 0:
        return stack, labels, stripes
    rep = stripes.as_bool()
    valid = stack.mask.astype(bool)

    new_range = inpaint_ns(stack.range, stripes, params, valid=valid)
    new_refl = inpaint_ns(stack.reflectivity, stripes, params, valid=valid)

    rr, cc = np.nonzero(rep)
    rays = pixel_rays(sensor, rr, cc)
    new_coords = stack.coords.copy()
    new_coords[rr, cc] = rays * new_range[rr, cc][:, None]
    new_normals = stack.normals.copy()
    new_normals[rr, cc] = 0.0
    new_mask = stack.mask.copy()
    new_mask[rr, cc] = 1

    out_labels = labels
    if labels is not None and fill_labels:
        out_labels = fill_labels_nn(labels, stripes, valid)

    repaired = RangeImageStack(
        range=new_range, reflectivity=new_refl, normals=new_normals,
        coords=new_coords, index=stack.index, mask=new_mask,
    )
    return repaired, out_labels, stripes
