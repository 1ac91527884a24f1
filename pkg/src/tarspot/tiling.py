"""Sliding-window decomposition and per-pixel vote fusion.

Full-leaf images are too large for patch detectors, so they are cut into
overlapping windows (default 600x400 stepped by 75x50). Each window's
binary detection mask votes on the pixels it covers; a pixel ends up
foreground when its positive-vote fraction reaches the threshold. The
fraction is coverage-normalized so border pixels, which fewer windows
reach, are not penalized.

Key property: when the per-window detector is a pixelwise function of
patch content, every covering window votes identically on a pixel, so
fusion reproduces the whole-image result exactly for any threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError


@dataclass(frozen=True)
class TileConfig:
    """Window geometry and vote threshold for tiled detection."""

    window_w: int = 600
    window_h: int = 400
    stride_x: int = 75
    stride_y: int = 50
    vote_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.window_w < 1 or self.window_h < 1:
            raise ContractError("window dimensions must be positive")
        if not 0 < self.stride_x <= self.window_w:
            raise ContractError(
                f"stride_x must be in (0, window_w], got {self.stride_x}"
            )
        if not 0 < self.stride_y <= self.window_h:
            raise ContractError(
                f"stride_y must be in (0, window_h], got {self.stride_y}"
            )
        if not 0.0 < self.vote_threshold <= 1.0:
            raise ContractError(
                f"vote_threshold must be in (0, 1], got {self.vote_threshold}"
            )


@dataclass(frozen=True)
class TileGrid:
    """Row-major window anchors, all fully inside the image."""

    image_w: int
    image_h: int
    windows: tuple[tuple[int, int, int, int], ...]  # (x, y, w, h)

    def __len__(self) -> int:
        return len(self.windows)


def _anchors(length: int, window: int, stride: int) -> list[int]:
    # last anchor clamps flush to the far edge when stride does not divide
    positions = list(range(0, length - window + 1, stride))
    if positions[-1] != length - window:
        positions.append(length - window)
    return positions


def make_grid(image_w: int, image_h: int, cfg: TileConfig) -> TileGrid:
    """Enumerate window anchors covering every pixel of the image."""
    if image_w < cfg.window_w or image_h < cfg.window_h:
        raise DegenerateInputError(
            f"image {image_w}x{image_h} is smaller than the "
            f"{cfg.window_w}x{cfg.window_h} window"
        )
    xs = _anchors(image_w, cfg.window_w, cfg.stride_x)
    ys = _anchors(image_h, cfg.window_h, cfg.stride_y)
    windows = tuple(
        (x, y, cfg.window_w, cfg.window_h) for y in ys for x in xs
    )
    return TileGrid(image_w=image_w, image_h=image_h, windows=windows)


@dataclass
class VoteField:
    """Per-pixel accumulators: windows seen and positive votes among them."""

    positive_votes: np.ndarray  # (H, W) int32
    coverage: np.ndarray  # (H, W) int32

    @classmethod
    def zeros(cls, width: int, height: int) -> "VoteField":
        return cls(
            positive_votes=np.zeros((height, width), dtype=np.int32),
            coverage=np.zeros((height, width), dtype=np.int32),
        )

    @property
    def width(self) -> int:
        return self.coverage.shape[1]

    @property
    def height(self) -> int:
        return self.coverage.shape[0]


def accumulate(
    votes: VoteField, window: tuple[int, int, int, int], patch_mask: np.ndarray
) -> VoteField:
    """Add one window's detection mask to the field, in place."""
    x, y, w, h = window
    if patch_mask.shape != (h, w):
        raise ContractError(
            f"patch mask shape {patch_mask.shape} does not match window {w}x{h}"
        )
    if patch_mask.dtype != np.bool_:
        raise ContractError("patch mask must be bool")
    if x < 0 or y < 0 or x + w > votes.width or y + h > votes.height:
        raise ContractError(f"window {window} exceeds {votes.width}x{votes.height}")
    votes.coverage[y : y + h, x : x + w] += 1
    votes.positive_votes[y : y + h, x : x + w] += patch_mask
    return votes


def fuse_votes(votes: VoteField, vote_threshold: float) -> np.ndarray:
    """Foreground where the positive fraction of covering windows >= threshold.

    The comparison is done as positive_votes >= threshold * coverage to keep
    it exact for rational thresholds rather than dividing per pixel.
    """
    if not 0.0 < vote_threshold <= 1.0:
        raise ContractError(f"vote_threshold must be in (0, 1], got {vote_threshold}")
    if (votes.coverage < 1).any():
        raise ContractError("vote field has zero-coverage pixels; accumulation incomplete")
    if (votes.positive_votes > votes.coverage).any():
        raise ContractError("vote field has positive_votes > coverage")
    return votes.positive_votes >= vote_threshold * votes.coverage
