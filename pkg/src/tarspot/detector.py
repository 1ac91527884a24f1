"""Detector abstraction: the built-in classical pipeline and an
external-process detector behind one interface, so a trained model can
plug into tiling and evaluation without being linked in.

External protocol, one subprocess invocation per batch of patches:

  request   A directory holding one PNG per patch plus manifest.json,
            a JSON array of {patch_id, file, width, height}. The
            directory path is appended as the final command argument.
  response  detections.json written into the same directory: an array of
            {patch_id, instances: [{bbox: [x, y, w, h], score, rle:
            counts}]}. The rle counts cover the bbox region only,
            column-major, background first (annot's convention at bbox
            size). Patches without an entry count as zero detections.
  exit      0 means success; anything else is a detector failure. Nonzero
            exit, timeout, and unparseable responses raise distinct
            errors.

Batching amortizes model startup; a resident-model server is out of scope.
"""

from __future__ import annotations

import json
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annot import RleMask, rle_decode, save_image
from .autogt import ThresholdConfig, spot_mask_from_planes, auto_ground_truth
from .binmorph import (
    BOX3,
    InstanceSet,
    connected_components,
    filter_min_area,
    instances_from_labels,
)
from .color import spot_planes, validate_rgb
from .errors import (
    ContractError,
    DetectorProcessError,
    DetectorProtocolError,
    DetectorTimeoutError,
)
from .tiling import TileConfig, VoteField, accumulate, fuse_votes, make_grid


@dataclass(frozen=True)
class DetectorSpec:
    """Which detector to run and how. Use the classical()/external() factories."""

    kind: str
    classical_cfg: ThresholdConfig | None = None
    external_cmd: tuple[str, ...] | None = None
    workdir: str | None = None
    timeout: float = 300.0
    score_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("classical", "external"):
            raise ContractError(f"unknown detector kind {self.kind!r}")
        if self.kind == "classical" and (
            self.classical_cfg is None or self.external_cmd is not None
        ):
            raise ContractError("classical spec takes exactly a ThresholdConfig")
        if self.kind == "external" and (
            self.external_cmd is None or self.classical_cfg is not None
        ):
            raise ContractError("external spec takes exactly a command")
        if self.kind == "external" and len(self.external_cmd) == 0:
            raise ContractError("external command must be non-empty")
        if self.timeout <= 0:
            raise ContractError("timeout must be positive")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ContractError("score_threshold must be in [0, 1]")

    @classmethod
    def classical(cls, cfg: ThresholdConfig | None = None) -> "DetectorSpec":
        return cls(kind="classical", classical_cfg=cfg or ThresholdConfig())

    @classmethod
    def external(
        cls,
        cmd: tuple[str, ...] | list[str],
        workdir: str | None = None,
        timeout: float = 300.0,
        score_threshold: float = 0.5,
    ) -> "DetectorSpec":
        return cls(
            kind="external",
            external_cmd=tuple(cmd),
            workdir=workdir,
            timeout=timeout,
            score_threshold=score_threshold,
        )


@dataclass(frozen=True)
class Detection:
    """One detected spot: bbox-local mask, image-space bbox, confidence."""

    mask: np.ndarray  # (bbox_h, bbox_w) bool
    bbox: tuple[int, int, int, int]  # (x, y, w, h)
    score: float
    label: int = 1

    def __post_init__(self) -> None:
        x, y, w, h = self.bbox
        if self.mask.shape != (h, w):
            raise ContractError(f"mask shape {self.mask.shape} != bbox {w}x{h}")
        if not 0.0 <= self.score <= 1.0:
            raise ContractError(f"score must be in [0, 1], got {self.score}")
        if not self.mask.any():
            raise ContractError("detection mask is empty")
        ys, xs = np.nonzero(self.mask)
        if ys.min() != 0 or xs.min() != 0 or ys.max() != h - 1 or xs.max() != w - 1:
            raise ContractError("bbox does not tightly bound the mask")


def _instances_to_detections(instances: InstanceSet) -> list[Detection]:
    out = []
    for inst in instances.instances:
        x0, y0, x1, y1 = inst.bbox
        local = instances.labels[y0 : y1 + 1, x0 : x1 + 1] == inst.id
        out.append(
            Detection(
                mask=local,
                bbox=(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
                score=1.0,
            )
        )
    return out


def detections_to_instances(
    detections: list[Detection], width: int, height: int
) -> InstanceSet:
    """Rasterize detections into one labeling (later detections win overlaps)."""
    labels = np.zeros((height, width), dtype=np.int32)
    for k, det in enumerate(detections, 1):
        x, y, w, h = det.bbox
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise ContractError(f"detection bbox {det.bbox} exceeds {width}x{height}")
        region = labels[y : y + h, x : x + w]
        region[det.mask] = k
    return instances_from_labels(labels)


# ---------------------------------------------------------------------------
# external protocol plumbing
# ---------------------------------------------------------------------------


def _run_external_batch(
    imgs: list[np.ndarray], spec: DetectorSpec
) -> list[list[Detection]]:
    request_dir = Path(tempfile.mkdtemp(prefix="tarspot-detect-", dir=spec.workdir))
    try:
        manifest = []
        for i, img in enumerate(imgs):
            name = f"patch_{i:05d}.png"
            save_image(request_dir / name, img)
            manifest.append(
                {
                    "patch_id": i,
                    "file": name,
                    "width": img.shape[1],
                    "height": img.shape[0],
                }
            )
        (request_dir / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        cmd = list(spec.external_cmd) + [str(request_dir)]
        try:
            proc = subprocess.run(
                cmd,
                cwd=spec.workdir,
                timeout=spec.timeout,
                capture_output=True,
                text=True,
            )
        except subprocess.TimeoutExpired as exc:
            raise DetectorTimeoutError(
                f"detector {cmd[0]!r} exceeded {spec.timeout:g}s on a "
                f"{len(imgs)}-patch batch"
            ) from exc
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-5:]
            raise DetectorProcessError(
                f"detector {cmd[0]!r} exited {proc.returncode}"
                + (": " + " | ".join(tail) if tail else "")
            )
        return _parse_response(request_dir / "detections.json", imgs, spec)
    finally:
        shutil.rmtree(request_dir, ignore_errors=True)


def _parse_response(
    path: Path, imgs: list[np.ndarray], spec: DetectorSpec
) -> list[list[Detection]]:
    if not path.exists():
        raise DetectorProtocolError("detector exited 0 but wrote no detections.json")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DetectorProtocolError(f"detections.json is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise DetectorProtocolError("detections.json must be a JSON array")
    results: list[list[Detection]] = [[] for _ in imgs]
    for entry in data:
        if not isinstance(entry, dict) or "patch_id" not in entry:
            raise DetectorProtocolError("response entries must be objects with patch_id")
        pid = entry["patch_id"]
        if not isinstance(pid, int) or not 0 <= pid < len(imgs):
            raise DetectorProtocolError(f"unknown patch_id {pid!r}")
        instances = entry.get("instances", [])
        if not isinstance(instances, list):
            raise DetectorProtocolError(f"patch {pid}: instances must be an array")
        img_h, img_w = imgs[pid].shape[:2]
        for inst in instances:
            det = _parse_instance(inst, pid, img_w, img_h)
            if det.score >= spec.score_threshold:
                results[pid].append(det)
    return results


def _parse_instance(inst, pid: int, img_w: int, img_h: int) -> Detection:
    where = f"patch {pid}"
    if not isinstance(inst, dict):
        raise DetectorProtocolError(f"{where}: instance entries must be objects")
    bbox = inst.get("bbox")
    if (
        not isinstance(bbox, list)
        or len(bbox) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox)
    ):
        raise DetectorProtocolError(f"{where}: bbox must be [x, y, w, h] integers")
    x, y, w, h = bbox
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > img_w or y + h > img_h:
        raise DetectorProtocolError(f"{where}: bbox {bbox} outside {img_w}x{img_h} patch")
    score = inst.get("score")
    if not isinstance(score, (int, float)) or isinstance(score, bool):
        raise DetectorProtocolError(f"{where}: score missing or non-numeric")
    counts = inst.get("rle")
    if not isinstance(counts, list):
        raise DetectorProtocolError(f"{where}: rle must be a counts array")
    try:
        mask = rle_decode(RleMask(width=w, height=h, counts=tuple(counts)))
        return Detection(mask=mask, bbox=(x, y, w, h), score=float(score))
    except Exception as exc:
        raise DetectorProtocolError(f"{where}: bad instance: {exc}") from exc


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def detect(img: np.ndarray, spec: DetectorSpec) -> list[Detection]:
    """Run the detector on one image; classical detection is pure."""
    img = validate_rgb(img)
    if spec.kind == "classical":
        return _instances_to_detections(auto_ground_truth(img, spec.classical_cfg))
    return _run_external_batch([img], spec)[0]


def detect_batch(imgs: list[np.ndarray], spec: DetectorSpec) -> list[list[Detection]]:
    """Detect over several images; external detectors get one invocation."""
    imgs = [validate_rgb(img) for img in imgs]
    if spec.kind == "classical":
        return [detect(img, spec) for img in imgs]
    if not imgs:
        return []
    return _run_external_batch(imgs, spec)


def detect_tiled(
    img: np.ndarray, spec: DetectorSpec, tile_cfg: TileConfig | None = None
) -> InstanceSet:
    """Sliding-window detection fused back into whole-image instances.

    Each window's detections rasterize to a patch mask that votes on the
    pixels it covers; the fused mask is re-instanced with connected
    components. The min-area filter applies once after fusion, not per
    window, so a spot straddling window borders is not dropped for being
    partially visible.

    Classical specs take a fast path: color planes are converted once for
    the whole image and sliced per window, which is exact because the
    conversions are pixelwise. Morphology still runs inside each window,
    border effects and all, exactly as a per-patch detector would.
    """
    img = validate_rgb(img)
    if tile_cfg is None:
        tile_cfg = TileConfig()
    grid = make_grid(img.shape[1], img.shape[0], tile_cfg)
    votes = VoteField.zeros(img.shape[1], img.shape[0])

    if spec.kind == "classical":
        cfg = spec.classical_cfg
        v_plane, a_plane = spot_planes(img)
        for window in grid.windows:
            x, y, w, h = window
            patch_mask = spot_mask_from_planes(
                v_plane.crop(x, y, w, h), a_plane.crop(x, y, w, h), cfg, BOX3
            )
            accumulate(votes, window, patch_mask)
        connectivity = cfg.connectivity
        min_area = cfg.min_area
    else:
        patches = [img[y : y + h, x : x + w] for x, y, w, h in grid.windows]
        batches = _run_external_batch(patches, spec)
        for window, detections in zip(grid.windows, batches):
            x, y, w, h = window
            patch_mask = np.zeros((h, w), dtype=np.bool_)
            for det in detections:
                bx, by, bw, bh = det.bbox
                patch_mask[by : by + bh, bx : bx + bw] |= det.mask
            accumulate(votes, window, patch_mask)
        connectivity = 8
        min_area = 0

    fused = fuse_votes(votes, tile_cfg.vote_threshold)
    return filter_min_area(connected_components(fused, connectivity), min_area)
