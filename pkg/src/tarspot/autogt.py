"""Automatic ground-truthing for tar spot images.

The pipeline: threshold the HSV value plane (spots are dark), threshold
the CIELAB a* plane (spots are not green), OR the two masks, clean with
open+close rounds, and label connected components. Thresholds start from
uncalibrated defaults (t_v=0.25, t_a=-5) and are meant to be replaced by
calibrate_thresholds output on real data.

Also computes disease severity: tar-spot pixel area relative to leaf
pixel area, with the leaf segmented by greenness.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import metrics
from .binmorph import (
    BOX3,
    InstanceSet,
    StructuringElement,
    closing,
    connected_components,
    filter_min_area,
    largest_component,
    opening,
)
from .color import ChannelPlane, spot_planes, validate_rgb
from .errors import ContractError, DegenerateInputError


@dataclass(frozen=True)
class ThresholdConfig:
    """Knobs for the thresholding pipeline.

    morph_iterations=0 disables cleanup entirely, leaving the raw fused
    mask; that mode is what makes tiled detection exactly equal whole-image
    detection, so it is allowed despite being noisier.
    """

    t_v: float = 0.25
    t_a: float = -5.0
    morph_iterations: int = 1
    connectivity: int = 8
    min_area: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.t_v <= 1.0:
            raise ContractError(f"t_v must be in [0, 1], got {self.t_v}")
        if not -128.0 <= self.t_a <= 128.0:
            raise ContractError(f"t_a must be in [-128, 128], got {self.t_a}")
        if self.morph_iterations < 0:
            raise ContractError("morph_iterations must be >= 0")
        if self.connectivity not in (4, 8):
            raise ContractError("connectivity must be 4 or 8")
        if self.min_area < 0:
            raise ContractError("min_area must be >= 0")

    def save(self, path: str | Path) -> None:
        lines = [
            "# tar spot threshold config",
            f"t_v = {self.t_v!r}",
            f"t_a = {self.t_a!r}",
            f"morph_iterations = {self.morph_iterations}",
            f"connectivity = {self.connectivity}",
            f"min_area = {self.min_area}",
            "",
        ]
        Path(path).write_text("\n".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ThresholdConfig":
        return cls(**parse_config_file(path))


_CONFIG_FIELDS = {
    "t_v": float,
    "t_a": float,
    "morph_iterations": int,
    "connectivity": int,
    "min_area": int,
}


def parse_config_file(path: str | Path) -> dict:
    """Read a key = value threshold config file into typed kwargs.

    Blank lines and # comments are ignored. Unknown keys are errors so a
    typo cannot silently fall back to a default. Missing keys are fine and
    take the dataclass default.
    """
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_FIELDS:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = _CONFIG_FIELDS[key](value.strip())
        except ValueError as exc:
            raise ContractError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


@dataclass(frozen=True)
class SeverityReport:
    """Per-image disease summary: spot count and infected leaf fraction."""

    spot_count: int
    spot_area: int
    leaf_area: int
    infected_fraction: float

    def to_dict(self) -> dict:
        return {
            "spot_count": self.spot_count,
            "spot_area": self.spot_area,
            "leaf_area": self.leaf_area,
            "infected_fraction": self.infected_fraction,
        }


def threshold_dark(plane: ChannelPlane, t_v: float, invert: bool = False) -> np.ndarray:
    """Mask of dark pixels: V <= t_v (invert selects bright instead)."""
    if plane.channel_id != "V":
        raise ContractError(f"threshold_dark needs a V plane, got {plane.channel_id!r}")
    mask = plane.samples <= np.float32(t_v)
    return ~mask if invert else mask


def threshold_nongreen(plane: ChannelPlane, t_a: float, invert: bool = False) -> np.ndarray:
    """Mask of non-green pixels: a* >= t_a (invert selects green instead)."""
    if plane.channel_id != "a":
        raise ContractError(
            f"threshold_nongreen needs an a* plane, got {plane.channel_id!r}"
        )
    mask = plane.samples >= np.float32(t_a)
    return ~mask if invert else mask


def fuse_or(m1: np.ndarray, m2: np.ndarray) -> np.ndarray:
    """Pixelwise OR of two equal-shape binary masks."""
    if m1.shape != m2.shape:
        raise ContractError(f"mask shapes differ: {m1.shape} vs {m2.shape}")
    if m1.dtype != np.bool_ or m2.dtype != np.bool_:
        raise ContractError("fuse_or expects bool masks")
    return m1 | m2


def spot_mask(
    img: np.ndarray, cfg: ThresholdConfig, se: StructuringElement = BOX3
) -> np.ndarray:
    """Fused and cleaned tar-spot mask, before instancing."""
    rgb = validate_rgb(img)
    v_plane, a_plane = spot_planes(rgb)
    return spot_mask_from_planes(v_plane, a_plane, cfg, se)


def spot_mask_from_planes(
    v_plane: ChannelPlane,
    a_plane: ChannelPlane,
    cfg: ThresholdConfig,
    se: StructuringElement = BOX3,
) -> np.ndarray:
    """spot_mask for callers that already hold the V and a* planes."""
    mask = fuse_or(threshold_dark(v_plane, cfg.t_v), threshold_nongreen(a_plane, cfg.t_a))
    for _ in range(cfg.morph_iterations):
        mask = closing(opening(mask, se), se)
    return mask


def auto_ground_truth(
    img: np.ndarray, cfg: ThresholdConfig, se: StructuringElement = BOX3
) -> InstanceSet:
    """Run the full pipeline on one image and return labeled spot instances."""
    mask = spot_mask(img, cfg, se)
    return filter_min_area(connected_components(mask, cfg.connectivity), cfg.min_area)


# ---------------------------------------------------------------------------
# threshold calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdGrid:
    """Candidate (t_v, t_a) pairs for exhaustive calibration."""

    t_v_values: tuple[float, ...]
    t_a_values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.t_v_values or not self.t_a_values:
            raise ContractError("threshold grid must have at least one point per axis")
        for v in self.t_v_values:
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"grid t_v value {v} outside [0, 1]")
        for a in self.t_a_values:
            if not -128.0 <= a <= 128.0:
                raise ContractError(f"grid t_a value {a} outside [-128, 128]")

    @classmethod
    def from_ranges(
        cls,
        t_v_min: float,
        t_v_max: float,
        t_v_steps: int,
        t_a_min: float,
        t_a_max: float,
        t_a_steps: int,
    ) -> "ThresholdGrid":
        if t_v_steps < 1 or t_a_steps < 1:
            raise ContractError("grid step counts must be >= 1")
        return cls(
            t_v_values=tuple(float(v) for v in np.linspace(t_v_min, t_v_max, t_v_steps)),
            t_a_values=tuple(float(a) for a in np.linspace(t_a_min, t_a_max, t_a_steps)),
        )

    def __len__(self) -> int:
        return len(self.t_v_values) * len(self.t_a_values)


@dataclass(frozen=True)
class CalibrationResult:
    """Winning config plus the full score surface for inspection."""

    config: ThresholdConfig
    best_score: float
    surface: np.ndarray  # (n_points, 3) float64: t_v, t_a, mean_f1


def calibrate_thresholds(
    validation: "Iterable[tuple[np.ndarray, InstanceSet]]",
    grid: ThresholdGrid,
    match_cfg: "metrics.MatchConfig | None" = None,
    base: ThresholdConfig | None = None,
    se: StructuringElement = BOX3,
) -> CalibrationResult:
    """Grid-search (t_v, t_a) maximizing mean per-image instance F1.

    base supplies the non-searched fields (morphology, connectivity,
    min_area). Ties break toward lower t_v, then lower t_a, so the result
    does not depend on evaluation order. Images are consumed one at a time
    with color planes computed once each; only thresholding onward reruns
    per grid point, and only one image is held in memory at a time.
    """
    if match_cfg is None:
        match_cfg = metrics.MatchConfig()
    if base is None:
        base = ThresholdConfig()

    points = [(tv, ta) for tv in grid.t_v_values for ta in grid.t_a_values]
    configs = [replace(base, t_v=tv, t_a=ta) for tv, ta in points]
    totals = np.zeros(len(points), dtype=np.float64)
    n_images = 0
    for img, truth in validation:
        v_plane, a_plane = spot_planes(validate_rgb(img))
        for i, cfg in enumerate(configs):
            mask = spot_mask_from_planes(v_plane, a_plane, cfg, se)
            pred = filter_min_area(
                connected_components(mask, cfg.connectivity), cfg.min_area
            )
            result = metrics.match_instances(pred, truth, match_cfg)
            totals[i] += metrics.f1_from_counts(result.tp, result.fp, result.fn)
        n_images += 1
    if n_images == 0:
        raise DegenerateInputError("calibration needs at least one validation image")

    surface = np.zeros((len(points), 3), dtype=np.float64)
    best_idx = 0
    best_key = None
    for i, (tv, ta) in enumerate(points):
        mean_f1 = totals[i] / n_images
        surface[i] = (tv, ta, mean_f1)
        key = (-mean_f1, tv, ta)
        if best_key is None or key < best_key:
            best_key = key
            best_idx = i
    best_tv, best_ta, best_score = surface[best_idx]
    return CalibrationResult(
        config=replace(base, t_v=float(best_tv), t_a=float(best_ta)),
        best_score=float(best_score),
        surface=surface,
    )


def write_score_surface(path: str | Path, result: CalibrationResult) -> None:
    """Dump the calibration surface as CSV: t_v, t_a, mean_f1."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_v", "t_a", "mean_f1"])
        for t_v, t_a, mean_f1 in result.surface:
            writer.writerow([repr(float(t_v)), repr(float(t_a)), repr(float(mean_f1))])


# ---------------------------------------------------------------------------
# leaf segmentation and severity
# ---------------------------------------------------------------------------


def leaf_mask_from_parts(
    a_plane: ChannelPlane,
    spot: np.ndarray,
    leaf_a_max: float = -5.0,
    se: StructuringElement = BOX3,
    connectivity: int = 8,
) -> np.ndarray:
    """Leaf mask from an already-computed a* plane and spot mask.

    Callers that have both lying around (detection just produced them)
    avoid a second color conversion over the full frame.
    """
    if a_plane.channel_id != "a":
        raise ContractError(f"leaf mask needs an a* plane, got {a_plane.channel_id!r}")
    if spot.shape != a_plane.samples.shape:
        raise ContractError(
            f"spot mask {spot.shape} does not match plane "
            f"{a_plane.samples.shape}"
        )
    green = a_plane.samples <= np.float32(leaf_a_max)
    return largest_component(closing(green | spot, se), connectivity)


def leaf_mask(
    img: np.ndarray,
    cfg: ThresholdConfig | None = None,
    leaf_a_max: float = -5.0,
    se: StructuringElement = BOX3,
) -> np.ndarray:
    """Foreground-leaf mask: green pixels plus spot pixels, largest blob.

    Spots sit on the leaf, so the spot mask is unioned in rather than
    punched out. A close pass solidifies the union before the largest
    connected component is kept; a frame with no background stays all-set.
    """
    if cfg is None:
        cfg = ThresholdConfig()
    rgb = validate_rgb(img)
    v_plane, a_plane = spot_planes(rgb)
    spot = spot_mask_from_planes(v_plane, a_plane, cfg, se)
    return leaf_mask_from_parts(a_plane, spot, leaf_a_max, se, cfg.connectivity)


def severity(instances: InstanceSet, leaf: np.ndarray) -> SeverityReport:
    """Spot count and spot-to-leaf area ratio for one image."""
    if leaf.shape != instances.labels.shape:
        raise ContractError(
            f"leaf mask shape {leaf.shape} does not match labels "
            f"{instances.labels.shape}"
        )
    if leaf.dtype != np.bool_:
        raise ContractError("leaf mask must be bool")
    leaf_area = int(np.count_nonzero(leaf))
    if leaf_area == 0:
        raise DegenerateInputError("leaf mask is empty; severity is undefined")
    spot_area = int(np.count_nonzero(instances.mask() & leaf))
    return SeverityReport(
        spot_count=len(instances),
        spot_area=spot_area,
        leaf_area=leaf_area,
        infected_fraction=spot_area / leaf_area,
    )
