"""Command-line front end.

Subcommands:
  project        project scans to NPY channel tensors
  pipeline       project + stripe repair + normals + boundaries (+ crop)
  eval           pair prediction/ground-truth label files and report IoU
  loss-selftest  run the loss-kernel gradient/oracle suite

Exit codes: 0 ok, 1 some scans failed, 2 config error, 3 IO error,
4 unpaired evaluation files. Every command is deterministic given
(inputs, config, seed); reruns produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as lio
from .boundary import boundaries_from_labels
from .core import LabelImage
from .errors import LrtError, SchemaError
from .metrics import ConfusionMatrix, accumulate, iou_report
from .projection import project
from .restore import InpaintParams, repair_stack
from .selftest import run_selftest
from .surface import estimate_normals

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PAIRING = 4


class _CliExit(Exception):
    def __init__(self, code: int):
        self.code = code


def _load_config_or_exit(path: str) -> lio.Config:
    try:
        return lio.load_config(path)
    except FileNotFoundError:
        print(f"config error: file not found: {path}", file=sys.stderr)
        raise _CliExit(EXIT_CONFIG)
    except SchemaError as exc:
        print(f"config error in {path}: {exc}", file=sys.stderr)
        raise _CliExit(EXIT_CONFIG)


def _scan_paths(args) -> list[Path]:
    if getattr(args, "scan", None):
        paths = [Path(args.scan)]
    else:
        scan_dir = Path(args.scan_dir)
        if not scan_dir.is_dir():
            print(f"io error: scan directory not found: {scan_dir}", file=sys.stderr)
            raise _CliExit(EXIT_IO)
        paths = sorted(scan_dir.glob("*.bin"))
        if not paths:
            print(f"io error: no .bin scans in {scan_dir}", file=sys.stderr)
            raise _CliExit(EXIT_IO)
    for p in paths:
        if not p.is_file():
            print(f"io error: scan not found: {p}", file=sys.stderr)
            raise _CliExit(EXIT_IO)
    return paths


def _read_point_labels(labels_dir: str | None, stem: str, remap: lio.LabelRemap,
                       count: int) -> np.ndarray | None:
    if labels_dir is None:
        return None
    path = Path(labels_dir) / f"{stem}.label"
    if not path.is_file():
        raise FileNotFoundError(str(path))
    return lio.read_label_file(path.read_bytes(), remap, count)


def _label_image_from_points(point_labels: np.ndarray, index: np.ndarray,
                             num_classes: int) -> LabelImage:
    lab = np.zeros(index.shape, dtype=np.int32)
    hit = index >= 0
    lab[hit] = point_labels[index[hit]]
    return LabelImage(labels=lab, num_classes=num_classes)


# ---------------------------------------------------------------------------
# project

def _project_one(scan_path: Path, cfg: lio.Config, out_dir: Path,
                 labels_dir: str | None) -> None:
    cloud = lio.read_scan_bin(scan_path.read_bytes())
    stack = project(cloud, cfg.sensor, r_min=cfg.pipeline.r_min)
    scan_out = out_dir / scan_path.stem
    scan_out.mkdir(parents=True, exist_ok=True)
    lio.write_tensor(stack.range.astype("<f4"), scan_out / "range.npy")
    lio.write_tensor(stack.reflectivity.astype("<f4"), scan_out / "reflectivity.npy")
    lio.write_tensor(stack.mask, scan_out / "mask.npy")
    lio.write_tensor(stack.coords.astype("<f4"), scan_out / "coords.npy")
    lio.write_tensor(stack.index, scan_out / "index.npy")
    point_labels = _read_point_labels(labels_dir, scan_path.stem, cfg.remap, cloud.count)
    if point_labels is not None:
        labels = _label_image_from_points(point_labels, stack.index, cfg.remap.num_classes)
        lio.write_tensor(labels.labels, scan_out / "labels.npy")


def cmd_project(args) -> int:
    cfg = _load_config_or_exit(args.config)
    out_dir = Path(args.out)
    for scan_path in _scan_paths(args):
        try:
            _project_one(scan_path, cfg, out_dir, args.labels)
        except (OSError, LrtError) as exc:
            print(f"io error processing {scan_path}: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline

def _crop_start(width: int, crop: int, seed: int | None, stem: str) -> int:
    if seed is None:
        return (width - crop) // 2
    rng = np.random.default_rng([seed, zlib.crc32(stem.encode())])
    return int(rng.integers(0, width - crop + 1))


def _pipeline_one(scan_path: Path, cfg: lio.Config, out_dir: Path,
                  labels_dir: str | None, fill_labels: bool,
                  crop_width: int | None, seed: int | None) -> dict:
    pipe = cfg.pipeline
    cloud = lio.read_scan_bin(scan_path.read_bytes())
    stack = project(cloud, cfg.sensor, r_min=pipe.r_min)
    point_labels = _read_point_labels(labels_dir, scan_path.stem, cfg.remap, cloud.count)
    labels = None
    if point_labels is not None:
        labels = _label_image_from_points(point_labels, stack.index, cfg.remap.num_classes)

    params = InpaintParams(dt=pipe.inpaint_dt, diffusion_every=pipe.inpaint_diffusion_every,
                           max_iters=pipe.inpaint_max_iters, tol=pipe.inpaint_tol)
    repaired, labels, stripes = repair_stack(
        stack, cfg.sensor, labels=labels, kernel=pipe.stripe_kernel,
        params=params, fill_labels=fill_labels)
    repaired = estimate_normals(repaired)
    boundary = None
    if labels is not None:
        boundary = boundaries_from_labels(labels, repaired.mask.astype(bool))

    sl = slice(None)
    if crop_width is not None:
        u0 = _crop_start(cfg.sensor.width, crop_width, seed, scan_path.stem)
        sl = slice(u0, u0 + crop_width)

    scan_out = out_dir / scan_path.stem
    scan_out.mkdir(parents=True, exist_ok=True)
    lio.write_tensor(repaired.range[:, sl].astype("<f4"), scan_out / "range.npy")
    lio.write_tensor(repaired.reflectivity[:, sl].astype("<f4"), scan_out / "reflectivity.npy")
    lio.write_tensor(repaired.normals[:, sl].astype("<f4"), scan_out / "normals.npy")
    lio.write_tensor(repaired.coords[:, sl].astype("<f4"), scan_out / "coords.npy")
    lio.write_tensor(np.ascontiguousarray(repaired.index[:, sl]), scan_out / "index.npy")
    lio.write_tensor(np.ascontiguousarray(repaired.mask[:, sl]), scan_out / "mask.npy")
    lio.write_tensor(np.ascontiguousarray(stripes.values[:, sl]), scan_out / "stripes.npy")
    if labels is not None:
        lio.write_tensor(np.ascontiguousarray(labels.labels[:, sl]), scan_out / "labels.npy")
    if boundary is not None:
        lio.write_tensor(boundary.values[:, sl].astype("<f4"), scan_out / "boundary.npy")
    lio.write_preview_pgm(repaired.range[:, sl], scan_out / "range_preview.pgm")
    lio.write_preview_pgm(repaired.reflectivity[:, sl], scan_out / "reflectivity_preview.pgm")

    return {"scan": scan_path.stem, "stripe_pixels": stripes.count,
            "points": cloud.count, "ok": True}


def cmd_pipeline(args) -> int:
    cfg = _load_config_or_exit(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fill_labels = cfg.pipeline.fill_labels if args.fill_labels is None else args.fill_labels
    crop_width = cfg.pipeline.crop_width if args.crop_width is None else args.crop_width
    if crop_width is not None and not (1 <= crop_width <= cfg.sensor.width):
        print(f"config error: crop width {crop_width} outside [1, {cfg.sensor.width}]",
              file=sys.stderr)
        return EXIT_CONFIG

    scans = _scan_paths(args)
    jobs = args.jobs
    results = []
    failed = 0

    def handle(scan_path: Path) -> dict:
        return _pipeline_one(scan_path, cfg, out_dir, args.labels,
                             fill_labels, crop_width, args.seed)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_pipeline_one, sp, cfg, out_dir, args.labels,
                                   fill_labels, crop_width, args.seed): sp
                       for sp in scans}
            for future, sp in futures.items():
                try:
                    results.append(future.result())
                except (OSError, LrtError) as exc:
                    print(f"scan {sp.stem} failed: {exc}", file=sys.stderr)
                    results.append({"scan": sp.stem, "ok": False, "error": str(exc)})
                    failed += 1
    else:
        for sp in scans:
            try:
                results.append(handle(sp))
            except (OSError, LrtError) as exc:
                print(f"scan {sp.stem} failed: {exc}", file=sys.stderr)
                results.append({"scan": sp.stem, "ok": False, "error": str(exc)})
                failed += 1

    results.sort(key=lambda r: r["scan"])
    manifest = {
        "config": {
            "sensor": cfg.sensor.__dict__,
            "pipeline": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in cfg.pipeline.__dict__.items()},
        },
        "fill_labels": fill_labels,
        "crop_width": crop_width,
        "seed": args.seed,
        "scans": results,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    cfg = _load_config_or_exit(args.config)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            print(f"io error: directory not found: {d}", file=sys.stderr)
            return EXIT_IO
    pred_files = {p.stem: p for p in pred_dir.glob("*.label")}
    gt_files = {p.stem: p for p in gt_dir.glob("*.label")}
    unpaired = sorted(set(pred_files) ^ set(gt_files))
    if unpaired or not gt_files:
        print(f"pairing error: unmatched stems {unpaired}" if unpaired
              else "pairing error: no label files found", file=sys.stderr)
        return EXIT_PAIRING

    cm = ConfusionMatrix.zeros(cfg.remap.num_classes)
    for stem in sorted(gt_files):
        gt_bytes = gt_files[stem].read_bytes()
        pred_bytes = pred_files[stem].read_bytes()
        if len(gt_bytes) != len(pred_bytes):
            print(f"pairing error: {stem}: prediction has {len(pred_bytes) // 4} points, "
                  f"ground truth has {len(gt_bytes) // 4}", file=sys.stderr)
            return EXIT_PAIRING
        count = len(gt_bytes) // 4
        gt = lio.read_label_file(gt_bytes, cfg.remap, count)
        pred = lio.read_label_file(pred_bytes, cfg.remap, count)
        cm = accumulate(cm, gt, pred)

    report = iou_report(cm, zero_absent=args.zero_absent)
    payload = {
        "per_class_iou": {str(c): report.per_class[c]
                          for c in report.scored_classes()},
        "miou": report.miou,
        "counts": cm.counts.tolist(),
        "scans": len(gt_files),
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    print(_iou_table(report), file=sys.stderr)
    return EXIT_OK


def _iou_table(report) -> str:
    lines = [f"{'class':>8} {'IoU':>8}"]
    for c in report.scored_classes():
        lines.append(f"{c:>8} {report.per_class[c]:>8.4f}")
    lines.append(f"{'mIoU':>8} {report.miou:>8.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# loss selftest

def cmd_loss_selftest(args) -> int:
    report = run_selftest(seed=args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_PARTIAL


# ---------------------------------------------------------------------------

def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("LRT_JOBS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrt", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="project scans to NPY tensors")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scan", help="single .bin scan file")
    group.add_argument("--scan-dir", help="directory of .bin scans")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="directory of .label files (same stems)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("pipeline", help="project, repair stripes, estimate normals")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scan", help="single .bin scan file")
    group.add_argument("--scan-dir", help="directory of .bin scans")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="directory of .label files (same stems)")
    p.add_argument("--fill-labels", type=_parse_bool, default=None,
                   help="fill label holes (default: config value)")
    p.add_argument("--crop-width", type=int, default=None,
                   help="output width; centered unless --seed is given")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for the random crop position")
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="worker processes (default: env LRT_JOBS or 1)")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="IoU/mIoU over paired .label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--zero-absent", action="store_true",
                   help="score absent classes as IoU 0 instead of excluding them")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss-selftest", help="gradient/oracle checks for loss kernels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_loss_selftest)
    return parser


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliExit as exc:
        return exc.code
    except FileNotFoundError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
