"""Persistence and interchange: image decode/encode, run-length mask
codec, COCO-style dataset manifests, dataset splitting, and overlay
rendering.

The manifest format is a single JSON object with images, annotations, and
categories arrays, ids dense and ascending, keys sorted, two-space
indent, trailing newline: exporting the same dataset twice produces
byte-identical files. Segmentations are run-length encoded column-major
over the full image, alternating background/foreground runs starting with
background (a leading 0 means the first pixel is foreground), so external
training tools that read uncompressed COCO RLE consume exports unchanged.

Overlay rendering composites each instance in a fixed 10-color palette
cycled by instance id, fill alpha 0.45, with a solid 1-pixel inner
boundary; identical inputs render identical bytes.
"""

from __future__ import annotations

import copy
import json
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .binmorph import InstanceSet, erode, instances_from_labels
from .errors import (
    ContractError,
    DegenerateInputError,
    ManifestReferenceError,
    ManifestSchemaError,
    RleDecodeError,
    UnsupportedSegmentationError,
)

SPLIT_NAMES = ("train", "val", "test")
CATEGORY = {"id": 1, "name": "tar_spot"}

OVERLAY_ALPHA = 0.45
OVERLAY_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
)


# ---------------------------------------------------------------------------
# RLE codec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RleMask:
    """Column-major run lengths, background first; a leading 0 flips that."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise RleDecodeError("RLE dimensions must be positive")
        if not self.counts:
            raise RleDecodeError("RLE counts must be non-empty")
        for i, c in enumerate(self.counts):
            if not isinstance(c, int) or isinstance(c, bool) or c < 0:
                raise RleDecodeError(f"RLE count {c!r} at index {i} is not a non-negative integer")
            if c == 0 and i > 0:
                raise RleDecodeError(f"RLE has interior zero run at index {i}")
        total = sum(self.counts)
        if total != self.width * self.height:
            raise RleDecodeError(
                f"RLE counts sum to {total}, expected {self.width * self.height}"
            )


def rle_encode(mask: np.ndarray) -> RleMask:
    """Encode a bool mask column-major into alternating run lengths."""
    if mask.ndim != 2 or mask.dtype != np.bool_:
        raise ContractError("rle_encode expects a 2-D bool mask")
    h, w = mask.shape
    flat = mask.ravel(order="F")
    changes = np.nonzero(np.diff(flat))[0] + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(width=w, height=h, counts=tuple(int(r) for r in runs))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Expand run lengths back into the original bool mask."""
    values = np.arange(len(rle.counts), dtype=np.int64) % 2 == 1
    flat = np.repeat(values, np.asarray(rle.counts, dtype=np.int64))
    return flat.reshape((rle.height, rle.width), order="F")


def _runs_from_positions(pos: np.ndarray, total: int) -> tuple[int, ...]:
    """Alternating run lengths from sorted foreground flat positions."""
    gaps = np.nonzero(np.diff(pos) > 1)[0]
    starts = pos[np.concatenate(([0], gaps + 1))]
    ends = pos[np.concatenate((gaps, [pos.size - 1]))] + 1
    counts: list[int] = []
    prev = 0
    for s, e in zip(starts.tolist(), ends.tolist()):
        counts.append(s - prev)
        counts.append(e - s)
        prev = e
    if total - prev > 0:
        counts.append(total - prev)
    return tuple(counts)


def rle_encode_instance(instances: InstanceSet, instance_id: int) -> RleMask:
    """Full-frame RLE of one instance, touching only its bounding box.

    Equal to rle_encode(instances.instance_mask(id)) but O(instance area)
    instead of O(frame), which matters when exporting many small spots on
    full-leaf images.
    """
    if not 1 <= instance_id <= len(instances.instances):
        raise ContractError(f"no instance with id {instance_id}")
    inst = instances.instances[instance_id - 1]
    x0, y0, x1, y1 = inst.bbox
    local = instances.labels[y0 : y1 + 1, x0 : x1 + 1] == instance_id
    # nonzero on the transpose walks pixels in column-major order
    lx, ly = np.nonzero(local.T)
    pos = (x0 + lx.astype(np.int64)) * instances.height + (y0 + ly)
    counts = _runs_from_positions(pos, instances.width * instances.height)
    return RleMask(width=instances.width, height=instances.height, counts=counts)


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageRef:
    """Identity and geometry of one dataset image."""

    id: int
    file: str
    width: int
    height: int
    split: str | None = None


def load_image(path: str | Path) -> np.ndarray:
    """Decode any Pillow-readable raster to (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path: str | Path, img: np.ndarray, compress_level: int = 1) -> None:
    """Write an RGB array losslessly (PNG). Low compression: these files
    are intermediates, and full-leaf frames take seconds at higher levels."""
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ContractError(f"lossless output must be .png, got {path.name!r}")
    Image.fromarray(img, mode="RGB").save(path, compress_level=compress_level)


# ---------------------------------------------------------------------------
# COCO-style manifest
# ---------------------------------------------------------------------------

# A manifest is a plain JSON-shaped dict; see module docstring for layout.
DatasetManifest = dict


def manifest_to_json(manifest: DatasetManifest) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    """Serialize atomically: readers never observe a half-written file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest_to_json(manifest), encoding="utf-8")
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestSchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestSchemaError(f"{path}: manifest root must be a JSON object")
    return data


def image_entry(ref: ImageRef) -> dict:
    """Manifest images[] entry for one ref."""
    if ref.split is not None and ref.split not in SPLIT_NAMES:
        raise ContractError(f"unknown split {ref.split!r}")
    return {
        "id": ref.id,
        "file": ref.file,
        "width": ref.width,
        "height": ref.height,
        "split": ref.split,
    }


def image_annotations(
    ref: ImageRef, instances: InstanceSet, first_ann_id: int
) -> list[dict]:
    """Manifest annotations[] entries for one image's instances.

    Batch commands call this image by image and drop the label raster
    immediately, so a full-leaf dataset never holds more than one raster.
    """
    if instances.labels.shape != (ref.height, ref.width):
        raise ContractError(
            f"instances for image {ref.id} are "
            f"{instances.labels.shape[1]}x{instances.labels.shape[0]}, "
            f"image is {ref.width}x{ref.height}"
        )
    annotations = []
    for offset, inst in enumerate(instances.instances):
        x0, y0, x1, y1 = inst.bbox
        rle = rle_encode_instance(instances, inst.id)
        annotations.append(
            {
                "id": first_ann_id + offset,
                "image_id": ref.id,
                "category_id": CATEGORY["id"],
                "bbox": [x0, y0, x1 - x0 + 1, y1 - y0 + 1],
                "area": inst.area,
                "segmentation": {
                    "size": [rle.height, rle.width],
                    "counts": list(rle.counts),
                },
            }
        )
    return annotations


def export_coco(
    dataset: Sequence[tuple[ImageRef, InstanceSet]],
    path: str | Path | None = None,
) -> DatasetManifest:
    """Build (and optionally write) a manifest from per-image instances.

    Annotation ids run 1..N in (image id, instance id) order. Image ids and
    files must be unique; instance rasters must match the ref geometry.
    """
    seen_ids: set[int] = set()
    seen_files: set[str] = set()
    images = []
    annotations = []
    for ref, instances in sorted(dataset, key=lambda pair: pair[0].id):
        if ref.id in seen_ids:
            raise ContractError(f"duplicate image id {ref.id}")
        if ref.file in seen_files:
            raise ContractError(f"duplicate image file {ref.file!r}")
        seen_ids.add(ref.id)
        seen_files.add(ref.file)
        images.append(image_entry(ref))
        annotations.extend(image_annotations(ref, instances, len(annotations) + 1))
    manifest = {
        "categories": [dict(CATEGORY)],
        "images": images,
        "annotations": annotations,
    }
    if path is not None:
        write_manifest(path, manifest)
    return manifest


def _require(entry: dict, key: str, kind, where: str):
    if key not in entry:
        raise ManifestSchemaError(f"{where}: missing required field {key!r}")
    value = entry[key]
    if kind is int and isinstance(value, bool):
        raise ManifestSchemaError(f"{where}: field {key!r} must be an integer")
    if not isinstance(value, kind):
        raise ManifestSchemaError(
            f"{where}: field {key!r} has type {type(value).__name__}"
        )
    return value


def _parse_segmentation(seg, ann_id: int) -> RleMask:
    where = f"annotation {ann_id}"
    if isinstance(seg, list):
        raise UnsupportedSegmentationError(
            f"{where}: polygon segmentation is not supported; re-export as RLE"
        )
    if not isinstance(seg, dict):
        raise ManifestSchemaError(f"{where}: segmentation must be an object")
    counts = seg.get("counts")
    if isinstance(counts, str):
        raise UnsupportedSegmentationError(
            f"{where}: compressed string RLE is not supported; use integer counts"
        )
    size = seg.get("size")
    if (
        not isinstance(size, list)
        or len(size) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in size)
    ):
        raise ManifestSchemaError(f"{where}: segmentation size must be [height, width]")
    if not isinstance(counts, list):
        raise ManifestSchemaError(f"{where}: segmentation counts must be an array")
    try:
        return RleMask(width=size[1], height=size[0], counts=tuple(counts))
    except RleDecodeError as exc:
        raise RleDecodeError(f"{where}: {exc}") from exc


def manifest_refs(manifest: DatasetManifest) -> dict[int, ImageRef]:
    """Validate the images array and return refs keyed by image id."""
    if not isinstance(manifest.get("images"), list):
        raise ManifestSchemaError("manifest 'images' must be an array")
    refs: dict[int, ImageRef] = {}
    for entry in manifest["images"]:
        if not isinstance(entry, dict):
            raise ManifestSchemaError("image entries must be objects")
        image_id = _require(entry, "id", int, "image")
        where = f"image {image_id}"
        ref = ImageRef(
            id=image_id,
            file=_require(entry, "file", str, where),
            width=_require(entry, "width", int, where),
            height=_require(entry, "height", int, where),
            split=entry.get("split"),
        )
        if ref.id in refs:
            raise ManifestSchemaError(f"duplicate image id {ref.id}")
        if ref.width < 1 or ref.height < 1:
            raise ManifestSchemaError(f"{where}: non-positive dimensions")
        if ref.split is not None and ref.split not in SPLIT_NAMES:
            raise ManifestSchemaError(f"{where}: unknown split {ref.split!r}")
        refs[ref.id] = ref
    return refs


def manifest_annotations(
    manifest: DatasetManifest, refs: dict[int, ImageRef]
) -> dict[int, list[dict]]:
    """Validate the annotations array and group entries by image id."""
    if not isinstance(manifest.get("annotations"), list):
        raise ManifestSchemaError("manifest 'annotations' must be an array")
    by_image: dict[int, list[dict]] = {image_id: [] for image_id in refs}
    seen_ann: set[int] = set()
    for entry in manifest["annotations"]:
        if not isinstance(entry, dict):
            raise ManifestSchemaError("annotation entries must be objects")
        ann_id = _require(entry, "id", int, "annotation")
        where = f"annotation {ann_id}"
        if ann_id in seen_ann:
            raise ManifestSchemaError(f"duplicate annotation id {ann_id}")
        seen_ann.add(ann_id)
        image_id = _require(entry, "image_id", int, where)
        if image_id not in refs:
            raise ManifestReferenceError(
                f"{where}: references missing image {image_id}"
            )
        by_image[image_id].append(entry)
    for entries in by_image.values():
        entries.sort(key=lambda e: e["id"])
    return by_image


def _rle_bbox(fg_starts: np.ndarray, fg_ends: np.ndarray, h: int) -> list[int]:
    """[x, y, w, h] bbox of the foreground runs of a column-major RLE.

    Flat position p sits at (row p % h, column p // h), so run starts sort
    by (column, row) and the column extremes come from the first and last
    run. A run that spills past a column bottom covers rows h-1 and 0, so
    any such run pins the row extent to the full column height.
    """
    min_col = int(fg_starts[0] // h)
    max_col = int((fg_ends[-1] - 1) // h)
    rows0 = fg_starts % h
    lengths = fg_ends - fg_starts
    if bool((rows0 + lengths > h).any()):
        min_row, max_row = 0, h - 1
    else:
        min_row = int(rows0.min())
        max_row = int((rows0 + lengths - 1).max())
    return [min_col, min_row, max_col - min_col + 1, max_row - min_row + 1]


def build_instances(ref: ImageRef, annotations: list[dict]) -> InstanceSet:
    """Rasterize one image's annotations back into an InstanceSet.

    Segmentations, areas, and bboxes must be mutually consistent. Ids are
    renumbered densely in first-pixel order, which reproduces the original
    ids for manifests this package exported. Labels are painted run by run
    straight from the counts, so cost scales with instance area rather
    than frame size.
    """
    h, w = ref.height, ref.width
    flat = np.zeros(h * w, dtype=np.int32)  # column-major pixel order
    for k, entry in enumerate(annotations, 1):
        ann_id = entry["id"]
        where = f"annotation {ann_id}"
        rle = _parse_segmentation(
            _require(entry, "segmentation", (dict, list), where), ann_id
        )
        if (rle.height, rle.width) != (h, w):
            raise ManifestSchemaError(
                f"{where}: segmentation is {rle.width}x{rle.height}, "
                f"image {ref.id} is {ref.width}x{ref.height}"
            )
        counts = np.asarray(rle.counts, dtype=np.int64)
        fg_ends = np.cumsum(counts)[1::2]
        fg_starts = fg_ends - counts[1::2]
        area = _require(entry, "area", int, where)
        if area != int(counts[1::2].sum()):
            raise ManifestSchemaError(f"{where}: area {area} does not match segmentation")
        bbox = entry.get("bbox")
        if (
            not isinstance(bbox, list)
            or len(bbox) != 4
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox)
        ):
            raise ManifestSchemaError(f"{where}: bbox must be [x, y, w, h] integers")
        if area > 0:
            actual = _rle_bbox(fg_starts, fg_ends, h)
            if bbox != actual:
                raise ManifestSchemaError(
                    f"{where}: bbox {bbox} does not match segmentation {actual}"
                )
            for start, end in zip(fg_starts.tolist(), fg_ends.tolist()):
                flat[start:end] = k
    return instances_from_labels(flat.reshape((h, w), order="F"))


def import_coco(source: str | Path | DatasetManifest) -> list[tuple[ImageRef, InstanceSet]]:
    """Read a manifest back into per-image instance sets, ordered by id.

    Inverse of export_coco on files this package wrote. Reads externally
    produced manifests too: unknown fields are ignored, but polygon or
    compressed-string segmentations, dangling references, and RLE/area
    inconsistencies are rejected with distinct errors naming the id.
    For datasets too large to hold every label raster at once, use
    manifest_refs/manifest_annotations/build_instances image by image.
    """
    manifest = read_manifest(source) if isinstance(source, (str, Path)) else source
    refs = manifest_refs(manifest)
    by_image = manifest_annotations(manifest, refs)
    return [
        (refs[image_id], build_instances(refs[image_id], by_image[image_id]))
        for image_id in sorted(refs)
    ]


# ---------------------------------------------------------------------------
# dataset splitting
# ---------------------------------------------------------------------------


def split_dataset(
    manifest: DatasetManifest,
    ratio: tuple[int, int] = (4, 1),
    seed: int = 0,
    split_names: tuple[str, str] = ("test", "val"),
    force: bool = False,
) -> DatasetManifest:
    """Assign each image to one of two splits by a seeded shuffle.

    Counts follow the ratio exactly where divisible; the remainder goes to
    the larger split. Already-split manifests are refused unless force.
    Returns a new manifest; the input is not modified.
    """
    a, b = ratio
    if a < 1 or b < 1:
        raise ContractError(f"ratio parts must be positive, got {ratio}")
    for name in split_names:
        if name not in SPLIT_NAMES:
            raise ContractError(f"unknown split name {name!r}")
    if split_names[0] == split_names[1]:
        raise ContractError("split names must differ")
    images = manifest.get("images")
    if not isinstance(images, list):
        raise ManifestSchemaError("manifest 'images' must be an array")
    if not images:
        raise DegenerateInputError("cannot split an empty manifest")
    if not force and any(entry.get("split") is not None for entry in images):
        raise ContractError("manifest already has split labels; pass force to relabel")

    out = copy.deepcopy(manifest)
    order = sorted(range(len(images)), key=lambda i: images[i].get("id", i))
    random.Random(seed).shuffle(order)
    n = len(order)
    n_first = n * a // (a + b)
    n_second = n * b // (a + b)
    leftover = n - n_first - n_second
    if a >= b:
        n_first += leftover
    else:
        n_second += leftover
    first_set = set(order[:n_first])
    for i, entry in enumerate(out["images"]):
        entry["split"] = split_names[0] if i in first_set else split_names[1]
    return out


# ---------------------------------------------------------------------------
# overlay rendering
# ---------------------------------------------------------------------------


def render_overlay(img: np.ndarray, instances: InstanceSet) -> np.ndarray:
    """Composite instance fills and boundaries over the source image.

    Fill is alpha-blended (OVERLAY_ALPHA), the 1-pixel inner boundary is
    solid, colors cycle through OVERLAY_PALETTE by instance id. Pure
    function of its inputs, so overlay files are byte-reproducible.
    """
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ContractError("overlay source must be (H, W, 3) uint8")
    if img.shape[:2] != instances.labels.shape:
        raise ContractError(
            f"image {img.shape[:2]} and labels {instances.labels.shape} differ"
        )
    out = img.copy()
    for inst in instances.instances:
        color = np.array(
            OVERLAY_PALETTE[(inst.id - 1) % len(OVERLAY_PALETTE)], dtype=np.float32
        )
        x0, y0, x1, y1 = inst.bbox
        box = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        local = instances.labels[box] == inst.id
        blended = np.rint(
            out[box].astype(np.float32) * (1.0 - OVERLAY_ALPHA) + color * OVERLAY_ALPHA
        ).astype(np.uint8)
        region = out[box]
        region[local] = blended[local]
        boundary = local & ~erode(local)
        region[boundary] = color.astype(np.uint8)
    return out
