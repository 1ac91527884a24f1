"""Batch command-line frontend.

Subcommands: groundtruth, detect, calibrate, eval, export, split,
overlay, bench. Machine-readable progress goes to stdout as JSON lines
(one object per event, each with an "event" key); human-oriented logs
and tables go to stderr. Exit codes: 0 full success, 1 total failure,
2 usage error, 3 partial success (some inputs failed).

Threshold precedence, lowest to highest: built-in defaults, then a
--config file, then explicit flags. A flag given on the command line
always wins.

Batches continue past per-image errors unless --strict, which cancels
outstanding work after the first failure. Results are reported in input
order regardless of worker scheduling, so identical inputs and flags
produce byte-identical manifests.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import shlex
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import backend
from .annot import (
    CATEGORY,
    ImageRef,
    build_instances,
    image_annotations,
    image_entry,
    load_image,
    manifest_annotations,
    manifest_refs,
    read_manifest,
    render_overlay,
    save_image,
    split_dataset,
    write_manifest,
)
from .autogt import (
    SeverityReport,
    ThresholdConfig,
    ThresholdGrid,
    auto_ground_truth,
    calibrate_thresholds,
    leaf_mask,
    leaf_mask_from_parts,
    parse_config_file,
    severity,
    spot_mask_from_planes,
    write_score_surface,
)
from .binmorph import InstanceSet, connected_components, filter_min_area
from .color import spot_planes, validate_rgb
from .detector import DetectorSpec, detect, detect_tiled, detections_to_instances
from .errors import ContractError, DegenerateInputError, TarspotError
from .metrics import MatchConfig, evaluate
from .tiling import TileConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARTIAL = 3

DEFAULT_SEED = 0


class _UsageError(Exception):
    """Bad flags or unusable inputs, detected before any work ran."""


def _setup(fn, *fn_args, **fn_kwargs):
    """Run a pre-flight step, converting contract violations to usage errors."""
    try:
        return fn(*fn_args, **fn_kwargs)
    except ContractError as exc:
        raise _UsageError(str(exc)) from exc


def _emit(event: dict) -> None:
    """One machine-readable event on stdout."""
    sys.stdout.write(json.dumps(event, sort_keys=True) + "\n")
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def _expand_inputs(patterns: list[str]) -> list[Path]:
    """Resolve paths and globs to a sorted, de-duplicated file list."""
    found: list[Path] = []
    for pattern in patterns:
        if any(ch in pattern for ch in "*?["):
            matches = [Path(p) for p in glob.glob(pattern, recursive=True)]
            if not matches:
                raise ContractError(f"glob matched no files: {pattern!r}")
            found.extend(m for m in matches if m.is_file())
        else:
            path = Path(pattern)
            if not path.is_file():
                raise ContractError(f"input is not a readable file: {pattern!r}")
            found.append(path)
    unique = sorted(set(found))
    if not unique:
        raise ContractError("no input files")
    return unique


def _resolve_file(file: str, manifest_path: Path) -> Path:
    """Locate a manifest-referenced image: absolute, cwd, then manifest dir."""
    path = Path(file)
    if path.is_absolute() or path.is_file():
        return path
    return manifest_path.parent / file


def _relative_file(path: Path, outdir: Path) -> str:
    """Manifest 'file' value: relative to the manifest's directory if possible."""
    try:
        return Path(os.path.relpath(path.resolve(), outdir.resolve())).as_posix()
    except ValueError:  # different drive (Windows); keep it absolute
        return path.resolve().as_posix()


def _ensure_outdir(arg: str) -> Path:
    out = Path(arg)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ContractError(f"output directory not writable: {out}")
    return out


def _map_pool(fn, items, workers: int, strict: bool) -> list[tuple[str, object]]:
    """Ordered map over a thread pool: [(status, payload-or-exception), ...].

    status is "ok", "error", or (strict aborts only) "skipped". Output
    order follows input order however the pool schedules.
    """
    results: list[tuple[str, object] | None] = [None] * len(items)
    if workers <= 1 or len(items) <= 1:
        for i, item in enumerate(items):
            try:
                results[i] = ("ok", fn(item))
            except Exception as exc:
                results[i] = ("error", exc)
                if strict:
                    break
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(fn, item): i for i, item in enumerate(items)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = ("ok", future.result())
                except Exception as exc:
                    results[i] = ("error", exc)
                    if strict:
                        for other in futures:
                            other.cancel()
                        break
    return [r if r is not None else ("skipped", None) for r in results]


def _batch_exit(command: str, ok: int, failed: int, skipped: int, **extra) -> int:
    """Summary event plus the 0/1/3 exit code for a batch command."""
    _emit(
        {
            "event": "summary",
            "command": command,
            "ok": ok,
            "failed": failed,
            "skipped": skipped,
            **extra,
        }
    )
    if failed == 0 and skipped == 0:
        return EXIT_OK
    return EXIT_PARTIAL if ok > 0 else EXIT_FAILURE


def _atomic_save_image(path: Path, img: np.ndarray) -> None:
    tmp = path.with_name(path.name + ".tmp.png")
    save_image(tmp, img)
    os.replace(tmp, path)


def _write_overlay(outdir: Path, ref: ImageRef, img: np.ndarray, instances) -> str:
    overlay_dir = outdir / "overlays"
    overlay_dir.mkdir(exist_ok=True)
    name = f"{ref.id:05d}_{Path(ref.file).stem}_overlay.png"
    _atomic_save_image(overlay_dir / name, render_overlay(img, instances))
    return str(overlay_dir / name)


def _assemble_manifest(entries: list[tuple[dict, list[dict]]]) -> dict:
    """Combine per-image (images[] entry, local annotations) into one manifest.

    Annotation ids are renumbered 1..N in image-id order, matching what
    export_coco would produce for the same data.
    """
    entries = sorted(entries, key=lambda pair: pair[0]["id"])
    images = [entry for entry, _ in entries]
    annotations = []
    for _, anns in entries:
        for ann in anns:
            ann = dict(ann)
            ann["id"] = len(annotations) + 1
            annotations.append(ann)
    return {"categories": [dict(CATEGORY)], "images": images, "annotations": annotations}


# ---------------------------------------------------------------------------
# flag parsing helpers
# ---------------------------------------------------------------------------


def _parse_geometry(value: str, flag: str) -> tuple[int, int]:
    parts = value.lower().split("x")
    if len(parts) != 2:
        raise ContractError(f"{flag} expects WxH integers, got {value!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ContractError(f"{flag} expects WxH integers, got {value!r}") from exc


def _parse_range(value: str, flag: str) -> tuple[float, float, int]:
    parts = value.split(":")
    if len(parts) != 3:
        raise ContractError(f"{flag} expects MIN:MAX:STEPS, got {value!r}")
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ContractError(f"{flag} expects MIN:MAX:STEPS, got {value!r}") from exc


def _parse_ratio(value: str) -> tuple[int, int]:
    parts = value.split(":")
    if len(parts) != 2:
        raise ContractError(f"--ratio expects A:B integers, got {value!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ContractError(f"--ratio expects A:B integers, got {value!r}") from exc


def _threshold_config(args: argparse.Namespace) -> ThresholdConfig:
    """Merge defaults <- config file <- explicit flags."""
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key in ("t_v", "t_a", "morph_iterations", "connectivity", "min_area"):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return ThresholdConfig(**merged)


def _tile_config(args: argparse.Namespace) -> TileConfig:
    window_w, window_h = _parse_geometry(args.window, "--window")
    stride_x, stride_y = _parse_geometry(args.stride, "--stride")
    return TileConfig(
        window_w=window_w,
        window_h=window_h,
        stride_x=stride_x,
        stride_y=stride_y,
        vote_threshold=args.vote_threshold,
    )


def _detector_spec(args: argparse.Namespace, cfg: ThresholdConfig) -> DetectorSpec:
    choice = args.detector
    if choice == "classical":
        return DetectorSpec.classical(cfg)
    if choice.startswith("external:"):
        cmd = shlex.split(choice[len("external:") :])
        return DetectorSpec.external(
            cmd, timeout=args.timeout, score_threshold=args.score_threshold
        )
    raise ContractError(
        f"--detector must be 'classical' or 'external:<cmd>', got {choice!r}"
    )


def _add_threshold_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("thresholding")
    group.add_argument(
        "--threshold-v", dest="t_v", type=float, default=None,
        metavar="T", help="HSV value cutoff; pixels at or below are dark",
    )
    group.add_argument(
        "--threshold-a", dest="t_a", type=float, default=None,
        metavar="T", help="CIELAB a* cutoff; pixels at or above are non-green",
    )
    group.add_argument(
        "--morph-iterations", type=int, default=None, metavar="N",
        help="open+close cleanup rounds (0 disables)",
    )
    group.add_argument(
        "--connectivity", type=int, choices=(4, 8), default=None,
        help="pixel adjacency for component labeling",
    )
    group.add_argument(
        "--min-area", type=int, default=None, metavar="PX",
        help="drop instances smaller than PX pixels",
    )
    group.add_argument(
        "--config", default=None, metavar="FILE",
        help="threshold config file; explicit flags override its values",
    )


def _add_pool_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--workers", type=int, default=1, metavar="N",
        help="worker threads over images (default 1)",
    )
    parser.add_argument(
        "--strict", action="store_true",
        help="abort the batch on the first per-image error",
    )


def _add_tile_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("tiling")
    group.add_argument("--window", default="600x400", metavar="WxH",
                       help="sliding window size (default 600x400)")
    group.add_argument("--stride", default="75x50", metavar="XxY",
                       help="window step (default 75x50)")
    group.add_argument(
        "--vote-threshold", type=float, default=0.5, metavar="F",
        help="positive-vote fraction for a fused foreground pixel (default 0.5)",
    )


def _add_detector_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("detector")
    group.add_argument(
        "--detector", default="classical", metavar="SPEC",
        help="'classical' or 'external:<command line>'",
    )
    group.add_argument(
        "--score-threshold", type=float, default=0.5, metavar="F",
        help="drop external detections scoring below F (default 0.5)",
    )
    group.add_argument(
        "--timeout", type=float, default=300.0, metavar="S",
        help="external detector time budget in seconds (default 300)",
    )


# ---------------------------------------------------------------------------
# groundtruth
# ---------------------------------------------------------------------------


def cmd_groundtruth(args: argparse.Namespace) -> int:
    cfg = _setup(_threshold_config, args)
    inputs = _setup(_expand_inputs, args.inputs)
    outdir = _setup(_ensure_outdir, args.out)

    def work(job: tuple[int, Path]) -> dict:
        image_id, path = job
        img = load_image(path)
        instances = auto_ground_truth(img, cfg)
        ref = ImageRef(
            id=image_id,
            file=_relative_file(path, outdir),
            width=img.shape[1],
            height=img.shape[0],
        )
        overlay = _write_overlay(outdir, ref, img, instances) if args.overlays else None
        return {
            "entry": image_entry(ref),
            "annotations": image_annotations(ref, instances, 1),
            "instances": len(instances),
            "overlay": overlay,
        }

    jobs = list(enumerate(inputs, 1))
    results = _map_pool(work, jobs, args.workers, args.strict)

    entries = []
    ok = failed = skipped = 0
    for (image_id, path), (status, payload) in zip(jobs, results):
        if status == "ok":
            ok += 1
            entries.append((payload["entry"], payload["annotations"]))
            event = {
                "event": "image",
                "status": "ok",
                "id": image_id,
                "file": str(path),
                "instances": payload["instances"],
            }
            if payload["overlay"]:
                event["overlay"] = payload["overlay"]
            _emit(event)
        elif status == "error":
            failed += 1
            logger.error("%s: %s", path, payload)
            _emit({"event": "image", "status": "error", "id": image_id,
                   "file": str(path), "error": str(payload)})
        else:
            skipped += 1
            _emit({"event": "image", "status": "skipped", "id": image_id,
                   "file": str(path)})

    manifest_path = None
    if ok:
        manifest_path = outdir / "groundtruth.json"
        write_manifest(manifest_path, _assemble_manifest(entries))
    return _batch_exit(
        "groundtruth", ok, failed, skipped,
        manifest=str(manifest_path) if manifest_path else None,
    )


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------


def _detect_one(
    img: np.ndarray,
    spec: DetectorSpec,
    cfg: ThresholdConfig,
    tiled: bool,
    tile_cfg: TileConfig,
    leaf_a_max: float,
) -> tuple[InstanceSet, SeverityReport | None]:
    """Instances plus a severity report (None when the leaf mask is empty).

    The classical whole-image path computes color planes once and shares
    them between detection and leaf segmentation; other paths pay for a
    second conversion to build the leaf mask.
    """
    if spec.kind == "classical" and not tiled:
        v_plane, a_plane = spot_planes(validate_rgb(img))
        mask = spot_mask_from_planes(v_plane, a_plane, cfg)
        instances = filter_min_area(
            connected_components(mask, cfg.connectivity), cfg.min_area
        )
        leaf = leaf_mask_from_parts(a_plane, mask, leaf_a_max, connectivity=cfg.connectivity)
    else:
        if tiled:
            instances = detect_tiled(img, spec, tile_cfg)
        else:
            detections = detect(img, spec)
            instances = detections_to_instances(detections, img.shape[1], img.shape[0])
        leaf = leaf_mask(img, cfg, leaf_a_max)
    try:
        report = severity(instances, leaf)
    except DegenerateInputError:
        report = None
    return instances, report


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _setup(_threshold_config, args)
    tile_cfg = _setup(_tile_config, args)
    spec = _setup(_detector_spec, args, cfg)
    inputs = _setup(_expand_inputs, args.inputs)
    outdir = _setup(_ensure_outdir, args.out)

    def work(job: tuple[int, Path]) -> dict:
        image_id, path = job
        img = load_image(path)
        t0 = time.perf_counter()
        instances, report = _detect_one(
            img, spec, cfg, args.tiled, tile_cfg, args.leaf_a_max
        )
        seconds = time.perf_counter() - t0
        ref = ImageRef(
            id=image_id,
            file=_relative_file(path, outdir),
            width=img.shape[1],
            height=img.shape[0],
        )
        overlay = _write_overlay(outdir, ref, img, instances) if args.overlays else None
        return {
            "entry": image_entry(ref),
            "annotations": image_annotations(ref, instances, 1),
            "instances": len(instances),
            "severity": report.to_dict() if report else None,
            "seconds": seconds,
            "overlay": overlay,
        }

    jobs = list(enumerate(inputs, 1))
    results = _map_pool(work, jobs, args.workers, args.strict)

    entries = []
    severities = []
    ok = failed = skipped = 0
    for (image_id, path), (status, payload) in zip(jobs, results):
        if status == "ok":
            ok += 1
            entries.append((payload["entry"], payload["annotations"]))
            severities.append(
                {"id": image_id, "file": payload["entry"]["file"],
                 "severity": payload["severity"]}
            )
            if payload["severity"] is None:
                logger.warning("%s: empty leaf mask; severity undefined", path)
            event = {
                "event": "image",
                "status": "ok",
                "id": image_id,
                "file": str(path),
                "instances": payload["instances"],
                "seconds": round(payload["seconds"], 4),
                "severity": payload["severity"],
            }
            if payload["overlay"]:
                event["overlay"] = payload["overlay"]
            _emit(event)
        elif status == "error":
            failed += 1
            logger.error("%s: %s", path, payload)
            _emit({"event": "image", "status": "error", "id": image_id,
                   "file": str(path), "error": str(payload)})
        else:
            skipped += 1
            _emit({"event": "image", "status": "skipped", "id": image_id,
                   "file": str(path)})

    manifest_path = severity_path = None
    if ok:
        manifest_path = outdir / "detections.json"
        write_manifest(manifest_path, _assemble_manifest(entries))
        severity_path = outdir / "severity.json"
        write_manifest(severity_path, {"images": severities})
    return _batch_exit(
        "detect", ok, failed, skipped,
        manifest=str(manifest_path) if manifest_path else None,
        severity=str(severity_path) if severity_path else None,
    )


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args: argparse.Namespace) -> int:
    base = _setup(_threshold_config, args)
    v_min, v_max, v_steps = _setup(_parse_range, args.grid_v, "--grid-v")
    a_min, a_max, a_steps = _setup(_parse_range, args.grid_a, "--grid-a")
    grid = _setup(
        ThresholdGrid.from_ranges, v_min, v_max, v_steps, a_min, a_max, a_steps
    )
    outdir = _setup(_ensure_outdir, args.out)
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    refs = manifest_refs(manifest)
    by_image = manifest_annotations(manifest, refs)

    selected = [
        refs[image_id]
        for image_id in sorted(refs)
        if args.split is None or refs[image_id].split == args.split
    ]
    _emit(
        {
            "event": "grid",
            "points": len(grid),
            "t_v": list(grid.t_v_values),
            "t_a": list(grid.t_a_values),
            "images": len(selected),
        }
    )
    if not selected:
        raise DegenerateInputError(
            "no validation images"
            + (f" with split {args.split!r}" if args.split else "")
        )

    def pairs():
        for ref in selected:
            truth = build_instances(ref, by_image[ref.id])
            img = load_image(_resolve_file(ref.file, manifest_path))
            if img.shape[:2] != (ref.height, ref.width):
                raise ContractError(
                    f"{ref.file}: file is {img.shape[1]}x{img.shape[0]}, "
                    f"manifest says {ref.width}x{ref.height}"
                )
            _emit({"event": "image", "status": "ok", "id": ref.id, "file": ref.file,
                   "instances": len(truth)})
            yield img, truth

    result = calibrate_thresholds(
        pairs(), grid, MatchConfig(iou_threshold=args.iou), base
    )

    config_path = outdir / "thresholds.cfg"
    result.config.save(config_path)
    surface_path = outdir / "surface.csv"
    write_score_surface(surface_path, result)
    _emit(
        {
            "event": "best",
            "t_v": result.config.t_v,
            "t_a": result.config.t_a,
            "mean_f1": result.best_score,
        }
    )
    _emit(
        {
            "event": "summary",
            "command": "calibrate",
            "ok": len(selected),
            "failed": 0,
            "skipped": 0,
            "config": str(config_path),
            "surface": str(surface_path),
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


class _LazyInstances:
    """Sequence view rasterizing one image's annotations at a time."""

    def __init__(self, refs, by_image, order):
        self._refs = refs
        self._by_image = by_image
        self._order = order

    def __len__(self) -> int:
        return len(self._order)

    def __getitem__(self, i: int) -> InstanceSet:
        image_id = self._order[i]
        return build_instances(self._refs[image_id], self._by_image[image_id])


def _aligned_ids(pred_refs: dict, truth_refs: dict) -> tuple[list[int], list[int]]:
    """Pair images across manifests by file basename."""

    def index(refs: dict, which: str) -> dict[str, int]:
        by_name: dict[str, int] = {}
        for image_id, ref in refs.items():
            name = Path(ref.file).name
            if name in by_name:
                raise ContractError(
                    f"{which} manifest has two images named {name!r}; cannot align"
                )
            by_name[name] = image_id
        return by_name

    pred_names = index(pred_refs, "prediction")
    truth_names = index(truth_refs, "truth")
    if set(pred_names) != set(truth_names):
        only_pred = sorted(set(pred_names) - set(truth_names))[:3]
        only_truth = sorted(set(truth_names) - set(pred_names))[:3]
        raise ContractError(
            "manifests cover different images; "
            f"only in predictions: {only_pred}, only in truth: {only_truth}"
        )
    names = sorted(pred_names)
    return [pred_names[n] for n in names], [truth_names[n] for n in names]


def cmd_eval(args: argparse.Namespace) -> int:
    outdir = _setup(_ensure_outdir, args.out) if args.out else None
    pred_manifest = read_manifest(args.pred)
    truth_manifest = read_manifest(args.truth)
    pred_refs = manifest_refs(pred_manifest)
    truth_refs = manifest_refs(truth_manifest)
    # misaligned manifests mean the flags point at the wrong files
    pred_order, truth_order = _setup(_aligned_ids, pred_refs, truth_refs)
    preds = _LazyInstances(pred_refs, manifest_annotations(pred_manifest, pred_refs), pred_order)
    truths = _LazyInstances(truth_refs, manifest_annotations(truth_manifest, truth_refs), truth_order)

    report = evaluate(
        preds, truths, MatchConfig(iou_threshold=args.iou), macro=args.macro
    )
    _emit({"event": "report", "command": "eval", **report.to_dict()})
    sys.stderr.write(report.to_table())
    if outdir is not None:
        write_manifest(outdir / "report.json", report.to_dict())
        logger.info("report written to %s", outdir / "report.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export / split
# ---------------------------------------------------------------------------


def cmd_export(args: argparse.Namespace) -> int:
    """Validate a manifest and rewrite it in this package's normal form."""
    outdir = _setup(_ensure_outdir, args.out)
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    refs = manifest_refs(manifest)
    by_image = manifest_annotations(manifest, refs)

    keep = [
        image_id
        for image_id in sorted(refs)
        if args.split is None or refs[image_id].split == args.split
    ]
    if not keep:
        raise DegenerateInputError(
            "no images to export"
            + (f" with split {args.split!r}" if args.split else "")
        )

    entries = []
    for image_id in keep:
        ref = refs[image_id]
        instances = build_instances(ref, by_image[image_id])  # full round-trip check
        entries.append((image_entry(ref), image_annotations(ref, instances, 1)))
        _emit({"event": "image", "status": "ok", "id": ref.id, "file": ref.file,
               "instances": len(instances)})

    out_path = outdir / "dataset.json"
    write_manifest(out_path, _assemble_manifest(entries))
    _emit({"event": "summary", "command": "export", "ok": len(keep), "failed": 0,
           "skipped": 0, "manifest": str(out_path)})
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    ratio = _setup(_parse_ratio, args.ratio)
    names = tuple(args.names.split(","))
    if len(names) != 2:
        raise _UsageError(
            f"--names expects two comma-separated names, got {args.names!r}"
        )
    manifest = read_manifest(args.manifest)
    out = split_dataset(
        manifest, ratio=ratio, seed=args.seed, split_names=names, force=args.force
    )
    outdir = _setup(_ensure_outdir, args.out)
    out_path = outdir / "split.json"
    write_manifest(out_path, out)
    counts = {name: 0 for name in names}
    for entry in out["images"]:
        counts[entry["split"]] += 1
    _emit({"event": "summary", "command": "split", "ok": len(out["images"]),
           "failed": 0, "skipped": 0, "manifest": str(out_path), "counts": counts})
    return EXIT_OK


# ---------------------------------------------------------------------------
# overlay
# ---------------------------------------------------------------------------


def cmd_overlay(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    refs = manifest_refs(manifest)
    by_image = manifest_annotations(manifest, refs)
    outdir = _setup(_ensure_outdir, args.out)
    order = sorted(refs)

    def work(image_id: int) -> dict:
        ref = refs[image_id]
        img = load_image(_resolve_file(ref.file, manifest_path))
        instances = build_instances(ref, by_image[image_id])
        path = _write_overlay(outdir, ref, img, instances)
        return {"overlay": path, "instances": len(instances)}

    results = _map_pool(work, order, args.workers, args.strict)
    ok = failed = skipped = 0
    for image_id, (status, payload) in zip(order, results):
        ref = refs[image_id]
        if status == "ok":
            ok += 1
            _emit({"event": "image", "status": "ok", "id": image_id, "file": ref.file,
                   "instances": payload["instances"], "overlay": payload["overlay"]})
        elif status == "error":
            failed += 1
            logger.error("%s: %s", ref.file, payload)
            _emit({"event": "image", "status": "error", "id": image_id,
                   "file": ref.file, "error": str(payload)})
        else:
            skipped += 1
            _emit({"event": "image", "status": "skipped", "id": image_id,
                   "file": ref.file})
    return _batch_exit("overlay", ok, failed, skipped)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _bench_detect(img: np.ndarray, spec: DetectorSpec, tiled: bool,
                  tile_cfg: TileConfig) -> None:
    if tiled:
        detect_tiled(img, spec, tile_cfg)
    else:
        detect(img, spec)


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _setup(_threshold_config, args)
    tile_cfg = _setup(_tile_config, args)
    spec = _setup(_detector_spec, args, cfg)
    inputs = _setup(_expand_inputs, args.inputs)
    if args.runs < 1:
        raise _UsageError("--runs must be >= 1")

    backend.set_num_threads(args.workers)
    backends = [backend.active_backend()]
    if args.compare_backends:
        if backend.HAVE_NUMBA:
            backends = ["numba", "numpy"]
        else:
            logger.warning("numba unavailable; comparing backends is a no-op")

    rows = []
    original = backend.active_backend()
    try:
        for name in backends:
            backend.set_backend(name)
            for path in inputs:
                img = load_image(path)
                _bench_detect(img, spec, args.tiled, tile_cfg)  # warm-up, excluded
                times = []
                for _ in range(args.runs):
                    t0 = time.perf_counter()
                    _bench_detect(img, spec, args.tiled, tile_cfg)
                    times.append(time.perf_counter() - t0)
                mean = statistics.fmean(times)
                sd = statistics.stdev(times) if len(times) > 1 else 0.0
                row = {
                    "detector": spec.kind + (" tiled" if args.tiled else ""),
                    "backend": name,
                    "file": str(path),
                    "width": img.shape[1],
                    "height": img.shape[0],
                    "runs": args.runs,
                    "mean_s": mean,
                    "sd_s": sd,
                }
                rows.append(row)
                _emit({"event": "bench", **row})
    finally:
        backend.set_backend(original)

    header = f"{'detector':<18} {'backend':<8} {'file':<32} {'mean_s':>9} {'sd_s':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['detector']:<18} {row['backend']:<8} "
            f"{Path(row['file']).name[:32]:<32} {row['mean_s']:>9.3f} {row['sd_s']:>8.3f}"
        )
    sys.stderr.write("\n".join(lines) + "\n")

    if args.out:
        outdir = _ensure_outdir(args.out)
        write_manifest(outdir / "bench.json", {"rows": rows})
    _emit({"event": "summary", "command": "bench", "ok": len(rows), "failed": 0,
           "skipped": 0})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tarspot",
        description="Detect and quantify tar spot disease on corn-leaf images.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser(
        "groundtruth",
        help="threshold-based labeling of spot instances, written as a manifest",
    )
    p.add_argument("inputs", nargs="+", help="image files or globs")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--overlays", action="store_true",
                   help="write per-image overlay renderings")
    _add_threshold_flags(p)
    _add_pool_flags(p)
    p.set_defaults(func=cmd_groundtruth)

    p = sub.add_parser("detect", help="detect spots and report per-image severity")
    p.add_argument("inputs", nargs="+", help="image files or globs")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--tiled", action="store_true",
                   help="sliding-window detection with vote fusion")
    p.add_argument("--overlays", action="store_true",
                   help="write per-image overlay renderings")
    p.add_argument("--leaf-a-max", type=float, default=-5.0, metavar="T",
                   help="a* cutoff for leaf segmentation (default -5)")
    _add_threshold_flags(p)
    _add_detector_flags(p)
    _add_tile_flags(p)
    _add_pool_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser(
        "calibrate",
        help="grid-search thresholds against a ground-truth manifest",
    )
    p.add_argument("--manifest", required=True,
                   help="manifest with images and truth annotations")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--grid-v", default="0.1:0.4:4", metavar="MIN:MAX:STEPS",
                   help="value-threshold grid (default 0.1:0.4:4)")
    p.add_argument("--grid-a", default="-10:5:4", metavar="MIN:MAX:STEPS",
                   help="a*-threshold grid (default -10:5:4); write "
                        "--grid-a=MIN:MAX:STEPS when MIN is negative")
    p.add_argument("--iou", type=float, default=0.5,
                   help="IoU for instance matching (default 0.5)")
    p.add_argument("--split", default=None,
                   help="use only images with this split label")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="score a detections manifest against truth")
    p.add_argument("--pred", required=True, help="predictions manifest")
    p.add_argument("--truth", required=True, help="ground-truth manifest")
    p.add_argument("-o", "--out", default=None,
                   help="directory for report.json (optional)")
    p.add_argument("--iou", type=float, default=0.5,
                   help="IoU for instance matching (default 0.5)")
    p.add_argument("--macro", action="store_true",
                   help="average per-image scores instead of pooling counts")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "export",
        help="validate a manifest and rewrite it in normal form",
    )
    p.add_argument("--manifest", required=True, help="manifest to export")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--split", default=None,
                   help="export only images with this split label")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("split", help="assign train/validation splits by seeded shuffle")
    p.add_argument("--manifest", required=True, help="manifest to split")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--ratio", default="4:1", metavar="A:B",
                   help="split ratio (default 4:1)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"shuffle seed (default {DEFAULT_SEED})")
    p.add_argument("--names", default="test,val", metavar="FIRST,SECOND",
                   help="split labels (default test,val)")
    p.add_argument("--force", action="store_true",
                   help="overwrite existing split labels")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("overlay", help="render overlay images for a manifest")
    p.add_argument("--manifest", required=True, help="manifest with annotations")
    p.add_argument("-o", "--out", required=True, help="output directory")
    _add_pool_flags(p)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("bench", help="time the detector on sample images")
    p.add_argument("inputs", nargs="+", help="image files or globs")
    p.add_argument("-o", "--out", default=None,
                   help="directory for bench.json (optional)")
    p.add_argument("--runs", type=int, default=5,
                   help="timed repetitions per image (default 5)")
    p.add_argument("--tiled", action="store_true",
                   help="benchmark the tiled path instead of whole-image")
    p.add_argument("--workers", type=int, default=1, metavar="N",
                   help="kernel threads (numba backend only)")
    p.add_argument("--compare-backends", action="store_true",
                   help="run both numba and numpy backends")
    _add_threshold_flags(p)
    _add_detector_flags(p)
    _add_tile_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # force= rebinds handlers to the current stderr, so repeated in-process
    # calls (tests, embedding) do not log into a stream from a previous call
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    workers = getattr(args, "workers", None)
    if workers is not None and workers < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except _UsageError as exc:
        logger.error("%s", exc)
        _emit({"event": "error", "command": args.command, "error": str(exc)})
        return EXIT_USAGE
    except (TarspotError, OSError) as exc:
        logger.error("%s", exc)
        _emit({"event": "error", "command": args.command, "error": str(exc)})
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
