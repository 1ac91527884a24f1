"""Synthetic corn-leaf image generator.

Real tar-spot datasets are private, so benchmarks and end-to-end tests
run on rendered leaves instead: a green field (or a leaf blob on a pale
background) with dark elliptical spots planted at known positions. The
generator emits both the image and its exact ground truth, making it the
oracle for detection quality: every spot's pixels are known because the
generator painted them.

Spots are placed with a minimum gap between their bounding boxes so the
morphological cleanup cannot merge neighbors, and axes are kept at or
above a minimum radius so small spots survive one opening. Usable as a
library or as `python -m tarspot.synth`.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annot import ImageRef, export_coco, save_image
from .binmorph import InstanceSet, instances_from_labels
from .errors import ContractError

LEAF_GREEN = (74, 128, 56)
PALE_BACKGROUND = (231, 229, 226)
SPOT_DARK = (30, 26, 22)


@dataclass(frozen=True)
class SynthConfig:
    """Geometry and appearance knobs for rendered leaves."""

    width: int = 6000
    height: int = 4000
    spot_count_range: tuple[int, int] = (0, 150)
    radius_range: tuple[float, float] = (5.0, 18.0)
    margin: int = 24
    min_gap: int = 8
    noise: int = 0
    background: str = "leaf"  # leaf = frame-filling close-up; field = blob on pale

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ContractError("image dimensions must be positive")
        lo, hi = self.spot_count_range
        if lo < 0 or hi < lo:
            raise ContractError(f"bad spot_count_range {self.spot_count_range}")
        rlo, rhi = self.radius_range
        if rlo < 1.0 or rhi < rlo:
            raise ContractError(f"bad radius_range {self.radius_range}")
        if self.min_gap < 0 or self.margin < 0:
            raise ContractError("margin and min_gap must be >= 0")
        if self.noise < 0:
            raise ContractError("noise must be >= 0")
        if self.background not in ("leaf", "field"):
            raise ContractError(f"unknown background {self.background!r}")


def _place_spots(
    cfg: SynthConfig, count: int, rng: np.random.Generator
) -> list[tuple[float, float, float, float]]:
    """Rejection-sample non-overlapping (cx, cy, ax, ay) ellipses.

    Boxes grown by min_gap must stay disjoint. Gives up on a spot after 200
    tries, so crowded configs may come back short; callers read the truth,
    not the request, for the real count.
    """
    rlo, rhi = cfg.radius_range
    if cfg.background == "field":
        ecx, ecy = cfg.width / 2.0, cfg.height / 2.0
        eax, eay = cfg.width * 0.42, cfg.height * 0.38
    placed: list[tuple[float, float, float, float]] = []
    boxes: list[tuple[float, float, float, float]] = []
    for _ in range(count):
        for _attempt in range(200):
            ax = rng.uniform(rlo, rhi)
            ay = rng.uniform(rlo, rhi)
            lo_x = cfg.margin + ax + 1
            lo_y = cfg.margin + ay + 1
            cx = rng.uniform(lo_x, cfg.width - lo_x)
            cy = rng.uniform(lo_y, cfg.height - lo_y)
            if cfg.background == "field":
                # keep spots well inside the leaf blob
                if ((cx - ecx) / eax) ** 2 + ((cy - ecy) / eay) ** 2 > 0.64:
                    continue
            gap = cfg.min_gap
            box = (cx - ax - gap, cy - ay - gap, cx + ax + gap, cy + ay + gap)
            if any(
                box[0] <= other[2] and other[0] <= box[2]
                and box[1] <= other[3] and other[1] <= box[3]
                for other in boxes
            ):
                continue
            placed.append((cx, cy, ax, ay))
            boxes.append(box)
            break
    return placed


def _paint_ellipse(
    labels: np.ndarray, spot_id: int, cx, cy, ax, ay
) -> tuple[tuple[slice, slice], np.ndarray]:
    """Label the ellipse and return its bbox slices plus the local mask,
    so callers can paint pixels without touching the rest of the frame."""
    y0 = max(int(np.floor(cy - ay)) - 1, 0)
    y1 = min(int(np.ceil(cy + ay)) + 2, labels.shape[0])
    x0 = max(int(np.floor(cx - ax)) - 1, 0)
    x1 = min(int(np.ceil(cx + ax)) + 2, labels.shape[1])
    ys, xs = np.ogrid[y0:y1, x0:x1]
    inside = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 <= 1.0
    box = (slice(y0, y1), slice(x0, x1))
    labels[box][inside] = spot_id
    return box, inside


def generate_leaf(
    cfg: SynthConfig, rng: np.random.Generator, spot_count: int | None = None
) -> tuple[np.ndarray, InstanceSet]:
    """Render one leaf image plus its exact instance ground truth."""
    if spot_count is None:
        lo, hi = cfg.spot_count_range
        spot_count = int(rng.integers(lo, hi + 1))

    img = np.empty((cfg.height, cfg.width, 3), dtype=np.uint8)
    img[:] = LEAF_GREEN
    if cfg.background == "field":
        img[:] = PALE_BACKGROUND
        ys, xs = np.ogrid[0 : cfg.height, 0 : cfg.width]
        leaf = (
            ((xs - cfg.width / 2.0) / (cfg.width * 0.42)) ** 2
            + ((ys - cfg.height / 2.0) / (cfg.height * 0.38)) ** 2
        ) <= 1.0
        img[leaf] = LEAF_GREEN

    labels = np.zeros((cfg.height, cfg.width), dtype=np.int32)
    for k, (cx, cy, ax, ay) in enumerate(_place_spots(cfg, spot_count, rng), 1):
        box, inside = _paint_ellipse(labels, k, cx, cy, ax, ay)
        shade = np.clip(
            np.asarray(SPOT_DARK, dtype=np.int16) + rng.integers(-6, 7, size=3),
            0,
            255,
        ).astype(np.uint8)
        img[box][inside] = shade

    if cfg.noise > 0:
        jitter = rng.integers(
            -cfg.noise, cfg.noise + 1, size=img.shape, dtype=np.int16
        )
        img = np.clip(img.astype(np.int16) + jitter, 0, 255).astype(np.uint8)

    return img, instances_from_labels(labels)


def generate_dataset(
    out_dir: str | Path,
    count: int,
    cfg: SynthConfig | None = None,
    seed: int = 0,
) -> Path:
    """Write count images plus a ground-truth manifest; returns its path.

    Per-image RNG streams are spawned from the seed, so any one image is
    reproducible independent of how many others are generated.
    """
    if count < 1:
        raise ContractError("dataset needs at least one image")
    if cfg is None:
        cfg = SynthConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(count)
    dataset = []
    for i, child in enumerate(children):
        img, truth = generate_leaf(cfg, np.random.default_rng(child))
        name = f"img_{i:05d}.png"
        save_image(out_dir / name, img)
        dataset.append(
            (
                ImageRef(id=i + 1, file=name, width=cfg.width, height=cfg.height),
                truth,
            )
        )
    manifest_path = out_dir / "truth.json"
    export_coco(dataset, manifest_path)
    return manifest_path


def _parse_pair(text: str, kind, name: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"{name} must be LO:HI, got {text!r}")
    try:
        return (kind(parts[0]), kind(parts[1]))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m tarspot.synth",
        description="Render synthetic tar-spot leaf images with exact ground truth.",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=50, help="number of images")
    parser.add_argument("--size", default="6000x4000", help="image size WxH")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument(
        "--spots", default="0:150", help="spot count range LO:HI per image"
    )
    parser.add_argument(
        "--radius", default="5:18", help="spot semi-axis range LO:HI in pixels"
    )
    parser.add_argument("--noise", type=int, default=0, help="color jitter amplitude")
    parser.add_argument(
        "--background",
        choices=("leaf", "field"),
        default="leaf",
        help="frame-filling leaf or leaf blob on pale background",
    )
    args = parser.parse_args(argv)

    try:
        w, _, h = args.size.partition("x")
        cfg = SynthConfig(
            width=int(w),
            height=int(h),
            spot_count_range=_parse_pair(args.spots, int, "--spots"),
            radius_range=_parse_pair(args.radius, float, "--radius"),
            noise=args.noise,
            background=args.background,
        )
        manifest = generate_dataset(args.out, args.count, cfg, seed=args.seed)
    except (ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        json.dumps(
            {
                "event": "summary",
                "images": args.count,
                "manifest": str(manifest),
                "seed": args.seed,
            },
            sort_keys=True,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
