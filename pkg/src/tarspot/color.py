"""Exact sRGB to HSV / CIELAB channel conversions.

Inputs are 8-bit interleaved RGB rasters interpreted as sRGB with a D65
white point (the de facto encoding of consumer cameras). Conversions run
in float64 per pixel and are stored as float32 planes, so threshold
semantics are deterministic and independent of image tiling: converting
a crop equals cropping the converted plane.

HSV is the standard hexcone: V = max(R,G,B)/255, S = (max-min)/max
(0 for black), H in [0, 360) with H := 0 for achromatic pixels.

CIELAB uses the IEC 61966-2-1 sRGB transfer curve, the D65 linear-RGB to
XYZ matrix, and CIE 1976 L*a*b* with reference white
(Xn, Yn, Zn) = (0.95047, 1.0, 1.08883). L* is clamped to [0, 100] and
a*, b* to [-128, 128].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import HAVE_NUMBA, use_numba
from .errors import ContractError

CHANNEL_IDS = ("H", "S", "V", "L", "a", "b")

# CIELAB piecewise transfer: f(t) = cbrt(t) above _LAB_EPS, linear below.
_LAB_EPS = (6.0 / 29.0) ** 3
_LAB_SLOPE = 3.0 * (6.0 / 29.0) ** 2
_LAB_OFFSET = 4.0 / 29.0

# Linear sRGB -> XYZ (D65). Row sums equal the reference white, so the
# white point maps to a* = b* = 0 by construction.
_XR, _XG, _XB = 0.4124564, 0.3575761, 0.1804375
_YR, _YG, _YB = 0.2126729, 0.7151522, 0.0721750
_ZR, _ZG, _ZB = 0.0193339, 0.1191920, 0.9503041
_XN = _XR + _XG + _XB
_YN = _YR + _YG + _YB
_ZN = _ZR + _ZG + _ZB


def _srgb_linear_lut() -> np.ndarray:
    """256-entry sRGB-to-linear table; bit-identical to the scalar transfer."""
    c = np.arange(256, dtype=np.float64) / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


_SRGB_LUT = _srgb_linear_lut()


@dataclass(frozen=True)
class ChannelPlane:
    """One real-valued channel of a converted image."""

    samples: np.ndarray  # (H, W) float32
    channel_id: str

    def __post_init__(self) -> None:
        if self.channel_id not in CHANNEL_IDS:
            raise ContractError(f"unknown channel_id {self.channel_id!r}")
        if self.samples.ndim != 2:
            raise ContractError("channel plane must be a 2-D array")

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def crop(self, x: int, y: int, w: int, h: int) -> "ChannelPlane":
        """Window view onto the plane, no copy. Because conversions are
        pixelwise, this equals converting the cropped image directly."""
        if x < 0 or y < 0 or w < 1 or h < 1 or x + w > self.width or y + h > self.height:
            raise ContractError(
                f"crop ({x},{y},{w},{h}) outside {self.width}x{self.height} plane"
            )
        return ChannelPlane(
            samples=self.samples[y : y + h, x : x + w], channel_id=self.channel_id
        )


def validate_rgb(img: np.ndarray) -> np.ndarray:
    """Check an (H, W, 3) uint8 raster and return it as a C-contiguous array."""
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise ContractError("expected an (H, W, 3) array")
    if img.dtype != np.uint8:
        raise ContractError(f"expected uint8 samples, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ContractError("image must be at least 1x1")
    return np.ascontiguousarray(img)


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _hsv_numpy(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r = rgb[..., 0].astype(np.int16)
    g = rgb[..., 1].astype(np.int16)
    b = rgb[..., 2].astype(np.int16)
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn

    v = mx / 255.0
    s = delta / np.maximum(mx, 1)  # mx == 0 implies delta == 0, so s = 0

    d = np.maximum(delta, 1).astype(np.float64)
    hr = 60.0 * ((g - b) / d)
    hr = np.where(hr < 0.0, hr + 360.0, hr)
    hg = 60.0 * ((b - r) / d) + 120.0
    hb = 60.0 * ((r - g) / d) + 240.0
    h = np.select([delta == 0, mx == r, mx == g], [0.0, hr, hg], default=hb)
    return (
        h.astype(np.float32),
        s.astype(np.float32),
        v.astype(np.float32),
    )


def _linear_rgb_numpy(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _SRGB_LUT[rgb[..., 0]], _SRGB_LUT[rgb[..., 1]], _SRGB_LUT[rgb[..., 2]]


def _lab_f_numpy(t: np.ndarray) -> np.ndarray:
    return np.where(t > _LAB_EPS, np.cbrt(t), t / _LAB_SLOPE + _LAB_OFFSET)


def _lab_numpy(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = _linear_rgb_numpy(rgb)
    fx = _lab_f_numpy((_XR * r + _XG * g + _XB * b) / _XN)
    fy = _lab_f_numpy((_YR * r + _YG * g + _YB * b) / _YN)
    fz = _lab_f_numpy((_ZR * r + _ZG * g + _ZB * b) / _ZN)
    lstar = np.clip(116.0 * fy - 16.0, 0.0, 100.0)
    astar = np.clip(500.0 * (fx - fy), -128.0, 128.0)
    bstar = np.clip(200.0 * (fy - fz), -128.0, 128.0)
    return (
        lstar.astype(np.float32),
        astar.astype(np.float32),
        bstar.astype(np.float32),
    )


def _va_numpy(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Fused V + a* path for the detection pipeline; expressions mirror the
    # full conversions exactly so the planes are bit-identical to them.
    r8 = rgb[..., 0].astype(np.int16)
    g8 = rgb[..., 1].astype(np.int16)
    b8 = rgb[..., 2].astype(np.int16)
    mx = np.maximum(np.maximum(r8, g8), b8)
    v = (mx / 255.0).astype(np.float32)

    r, g, b = _linear_rgb_numpy(rgb)
    fx = _lab_f_numpy((_XR * r + _XG * g + _XB * b) / _XN)
    fy = _lab_f_numpy((_YR * r + _YG * g + _YB * b) / _YN)
    astar = np.clip(500.0 * (fx - fy), -128.0, 128.0).astype(np.float32)
    return v, astar


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True)
    def _hsv_px(r: int, g: int, b: int) -> tuple[float, float, float]:
        mx = max(r, g, b)
        mn = min(r, g, b)
        delta = mx - mn
        v = mx / 255.0
        if mx == 0:
            return 0.0, 0.0, v
        s = delta / mx
        if delta == 0:
            return 0.0, s, v
        d = float(delta)
        if mx == r:
            h = 60.0 * ((g - b) / d)
            if h < 0.0:
                h += 360.0
        elif mx == g:
            h = 60.0 * ((b - r) / d) + 120.0
        else:
            h = 60.0 * ((r - g) / d) + 240.0
        return h, s, v

    @njit(cache=True)
    def _lab_f(t: float) -> float:
        if t > _LAB_EPS:
            return np.cbrt(t)
        return t / _LAB_SLOPE + _LAB_OFFSET

    @njit(cache=True)
    def _lab_px(r: float, g: float, b: float) -> tuple[float, float, float]:
        fx = _lab_f((_XR * r + _XG * g + _XB * b) / _XN)
        fy = _lab_f((_YR * r + _YG * g + _YB * b) / _YN)
        fz = _lab_f((_ZR * r + _ZG * g + _ZB * b) / _ZN)
        lstar = min(max(116.0 * fy - 16.0, 0.0), 100.0)
        astar = min(max(500.0 * (fx - fy), -128.0), 128.0)
        bstar = min(max(200.0 * (fy - fz), -128.0), 128.0)
        return lstar, astar, bstar

    @njit(cache=True, parallel=True)
    def _hsv_kernel(rgb, h, s, v):
        rows, cols = rgb.shape[0], rgb.shape[1]
        for y in prange(rows):
            for x in range(cols):
                hp, sp, vp = _hsv_px(
                    np.int16(rgb[y, x, 0]), np.int16(rgb[y, x, 1]), np.int16(rgb[y, x, 2])
                )
                h[y, x] = np.float32(hp)
                s[y, x] = np.float32(sp)
                v[y, x] = np.float32(vp)

    @njit(cache=True, parallel=True)
    def _lab_kernel(rgb, lut, lp, ap, bp):
        rows, cols = rgb.shape[0], rgb.shape[1]
        for y in prange(rows):
            for x in range(cols):
                lv, av, bv = _lab_px(
                    lut[rgb[y, x, 0]], lut[rgb[y, x, 1]], lut[rgb[y, x, 2]]
                )
                lp[y, x] = np.float32(lv)
                ap[y, x] = np.float32(av)
                bp[y, x] = np.float32(bv)

    @njit(cache=True, parallel=True)
    def _va_kernel(rgb, lut, v, a):
        rows, cols = rgb.shape[0], rgb.shape[1]
        for y in prange(rows):
            for x in range(cols):
                mx = max(rgb[y, x, 0], max(rgb[y, x, 1], rgb[y, x, 2]))
                v[y, x] = np.float32(mx / 255.0)
                r = lut[rgb[y, x, 0]]
                g = lut[rgb[y, x, 1]]
                b = lut[rgb[y, x, 2]]
                fx = _lab_f((_XR * r + _XG * g + _XB * b) / _XN)
                fy = _lab_f((_YR * r + _YG * g + _YB * b) / _YN)
                a[y, x] = np.float32(min(max(500.0 * (fx - fy), -128.0), 128.0))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def rgb_to_hsv(img: np.ndarray) -> tuple[ChannelPlane, ChannelPlane, ChannelPlane]:
    """Convert an 8-bit RGB raster to hexcone H, S, V planes."""
    img = validate_rgb(img)
    if use_numba():
        shape = img.shape[:2]
        h = np.empty(shape, np.float32)
        s = np.empty(shape, np.float32)
        v = np.empty(shape, np.float32)
        _hsv_kernel(img, h, s, v)
    else:
        h, s, v = _hsv_numpy(img)
    return ChannelPlane(h, "H"), ChannelPlane(s, "S"), ChannelPlane(v, "V")


def rgb_to_lab(img: np.ndarray) -> tuple[ChannelPlane, ChannelPlane, ChannelPlane]:
    """Convert an 8-bit sRGB raster to CIELAB L*, a*, b* planes."""
    img = validate_rgb(img)
    if use_numba():
        shape = img.shape[:2]
        lp = np.empty(shape, np.float32)
        ap = np.empty(shape, np.float32)
        bp = np.empty(shape, np.float32)
        _lab_kernel(img, _SRGB_LUT, lp, ap, bp)
    else:
        lp, ap, bp = _lab_numpy(img)
    return ChannelPlane(lp, "L"), ChannelPlane(ap, "a"), ChannelPlane(bp, "b")


def spot_planes(img: np.ndarray) -> tuple[ChannelPlane, ChannelPlane]:
    """Compute only the V and a* planes the detection pipeline thresholds.

    Single fused pass over the pixels; output is bit-identical to taking
    V from :func:`rgb_to_hsv` and a* from :func:`rgb_to_lab`.
    """
    img = validate_rgb(img)
    if use_numba():
        shape = img.shape[:2]
        v = np.empty(shape, np.float32)
        a = np.empty(shape, np.float32)
        _va_kernel(img, _SRGB_LUT, v, a)
    else:
        v, a = _va_numpy(img)
    return ChannelPlane(v, "V"), ChannelPlane(a, "a")
