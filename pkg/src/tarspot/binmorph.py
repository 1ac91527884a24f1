"""Binary mask algebra: erosion, dilation, opening, closing, and
connected-component labeling.

Masks are 2-D bool arrays. Out-of-bounds neighbors are treated as
background for both erosion and dilation, which matters at image edges:
erosion always clears pixels whose structuring element hangs off the
frame. Components are labeled 1..N, densely, ordered by each component's
first pixel in row-major scan order, so labeling is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import HAVE_NUMBA, use_numba
from .errors import ContractError


@dataclass(frozen=True)
class StructuringElement:
    """Neighborhood shape for morphology. Odd dimensions, origin at center."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = self.bits
        if b.ndim != 2 or b.dtype != np.bool_:
            raise ContractError("structuring element must be a 2-D bool array")
        if b.shape[0] % 2 == 0 or b.shape[1] % 2 == 0:
            raise ContractError("structuring element dimensions must be odd")
        if not b[b.shape[0] // 2, b.shape[1] // 2]:
            raise ContractError("structuring element origin must be set")

    @classmethod
    def box(cls, height: int = 3, width: int = 3) -> "StructuringElement":
        return cls(np.ones((height, width), dtype=np.bool_))

    @classmethod
    def cross(cls, size: int = 3) -> "StructuringElement":
        bits = np.zeros((size, size), dtype=np.bool_)
        bits[size // 2, :] = True
        bits[:, size // 2] = True
        return cls(bits)

    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """(dy, dx) offsets of set cells relative to the origin."""
        ys, xs = np.nonzero(self.bits)
        return (
            (ys - self.bits.shape[0] // 2).astype(np.int64),
            (xs - self.bits.shape[1] // 2).astype(np.int64),
        )


BOX3 = StructuringElement.box()


def _validate_mask(mask: np.ndarray) -> np.ndarray:
    if not isinstance(mask, np.ndarray) or mask.ndim != 2:
        raise ContractError("mask must be a 2-D array")
    if mask.dtype != np.bool_:
        raise ContractError(f"mask must be bool, got {mask.dtype}")
    if mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ContractError("mask must be at least 1x1")
    return np.ascontiguousarray(mask)


def _is_box3(se: StructuringElement) -> bool:
    return se.bits.shape == (3, 3) and bool(se.bits.all())


# ---------------------------------------------------------------------------
# numpy backend: padded shifts
# ---------------------------------------------------------------------------


def _erode_numpy(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    h, w = mask.shape
    ry, rx = se.bits.shape[0] // 2, se.bits.shape[1] // 2
    padded = np.zeros((h + 2 * ry, w + 2 * rx), dtype=np.bool_)
    padded[ry : ry + h, rx : rx + w] = mask
    out = np.ones((h, w), dtype=np.bool_)
    for i in range(se.bits.shape[0]):
        for j in range(se.bits.shape[1]):
            if se.bits[i, j]:
                out &= padded[i : i + h, j : j + w]
    return out


def _dilate_numpy(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    h, w = mask.shape
    ry, rx = se.bits.shape[0] // 2, se.bits.shape[1] // 2
    padded = np.zeros((h + 2 * ry, w + 2 * rx), dtype=np.bool_)
    padded[ry : ry + h, rx : rx + w] = mask
    out = np.zeros((h, w), dtype=np.bool_)
    for i in range(se.bits.shape[0]):
        for j in range(se.bits.shape[1]):
            if se.bits[i, j]:
                out |= padded[i : i + h, j : j + w]
    return out


def _ccl_numpy(mask: np.ndarray, eight: bool) -> tuple[np.ndarray, int]:
    """Run-based two-pass labeling. Row runs are extracted vectorized;
    the union pass is a Python two-pointer walk over adjacent rows."""
    h, w = mask.shape
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = mask
    d = np.diff(padded, axis=1)
    sr, sc = np.nonzero(d == 1)  # run start columns, row-major order
    er, ec = np.nonzero(d == -1)  # run end columns (exclusive)
    n_runs = sr.size
    labels = np.zeros((h, w), dtype=np.int32)
    if n_runs == 0:
        return labels, 0

    row_first = np.searchsorted(sr, np.arange(h + 1))
    parent = list(range(n_runs))

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    reach = 1 if eight else 0
    for y in range(1, h):
        a = row_first[y - 1]
        a_end = row_first[y]
        b = row_first[y]
        b_end = row_first[y + 1]
        while a < a_end and b < b_end:
            # runs [sc, ec) touch when they share a column (diagonals widen by 1)
            if sc[b] < ec[a] + reach and sc[a] < ec[b] + reach:
                ra, rb = find(a), find(b)
                if ra != rb:
                    if ra < rb:
                        parent[rb] = ra
                    else:
                        parent[ra] = rb
            if ec[a] <= ec[b]:
                a += 1
            else:
                b += 1

    final: dict[int, int] = {}
    count = 0
    for i in range(n_runs):
        root = find(i)
        lab = final.get(root)
        if lab is None:
            count += 1
            final[root] = lab = count
        labels[sr[i], sc[i] : ec[i]] = lab
    return labels, count


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _erode_generic_kernel(mask, offs_y, offs_x, out):
        h, w = mask.shape
        n = offs_y.size
        for y in prange(h):
            for x in range(w):
                v = True
                for k in range(n):
                    yy = y + offs_y[k]
                    xx = x + offs_x[k]
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or not mask[yy, xx]:
                        v = False
                        break
                out[y, x] = v

    @njit(cache=True, parallel=True)
    def _dilate_generic_kernel(mask, offs_y, offs_x, out):
        h, w = mask.shape
        n = offs_y.size
        for y in prange(h):
            for x in range(w):
                v = False
                for k in range(n):
                    yy = y + offs_y[k]
                    xx = x + offs_x[k]
                    if 0 <= yy < h and 0 <= xx < w and mask[yy, xx]:
                        v = True
                        break
                out[y, x] = v

    @njit(cache=True, parallel=True)
    def _erode_box3_kernel(mask, out):
        h, w = mask.shape
        for y in prange(h):
            if y == 0 or y == h - 1:
                for x in range(w):
                    out[y, x] = False
                continue
            out[y, 0] = False
            out[y, w - 1] = False
            for x in range(1, w - 1):
                out[y, x] = (
                    mask[y - 1, x - 1] and mask[y - 1, x] and mask[y - 1, x + 1]
                    and mask[y, x - 1] and mask[y, x] and mask[y, x + 1]
                    and mask[y + 1, x - 1] and mask[y + 1, x] and mask[y + 1, x + 1]
                )

    @njit(cache=True, parallel=True)
    def _dilate_box3_kernel(mask, out):
        h, w = mask.shape
        for y in prange(h):
            y0 = y - 1 if y > 0 else 0
            y1 = y + 1 if y < h - 1 else h - 1
            for x in range(w):
                x0 = x - 1 if x > 0 else 0
                x1 = x + 1 if x < w - 1 else w - 1
                v = False
                for yy in range(y0, y1 + 1):
                    for xx in range(x0, x1 + 1):
                        if mask[yy, xx]:
                            v = True
                            break
                    if v:
                        break
                out[y, x] = v

    @njit(cache=True)
    def _uf_find(parent, i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            nxt = parent[i]
            parent[i] = root
            i = nxt
        return root

    @njit(cache=True)
    def _ccl_kernel(mask, eight):
        h, w = mask.shape
        labels = np.zeros((h, w), dtype=np.int32)
        # at most one new provisional label per two columns per row
        parent = np.empty(h * ((w + 1) // 2) + 1, dtype=np.int32)
        nxt = 1
        for y in range(h):
            for x in range(w):
                if not mask[y, x]:
                    continue
                best = 0
                if x > 0 and mask[y, x - 1]:
                    best = _uf_find(parent, labels[y, x - 1])
                if y > 0:
                    x0 = x - 1 if (eight and x > 0) else x
                    x1 = x + 1 if (eight and x + 1 < w) else x
                    for xx in range(x0, x1 + 1):
                        if mask[y - 1, xx]:
                            r = _uf_find(parent, labels[y - 1, xx])
                            if best == 0 or r == best:
                                best = r
                            elif r < best:
                                parent[best] = r
                                best = r
                            else:
                                parent[r] = best
                if best == 0:
                    parent[nxt] = nxt
                    labels[y, x] = nxt
                    nxt += 1
                else:
                    labels[y, x] = best
        # second pass: dense final ids in first-pixel raster order
        final = np.zeros(nxt, dtype=np.int32)
        count = 0
        for y in range(h):
            for x in range(w):
                lab = labels[y, x]
                if lab == 0:
                    continue
                root = _uf_find(parent, lab)
                f = final[root]
                if f == 0:
                    count += 1
                    final[root] = f = count
                labels[y, x] = f
        return labels, count


# ---------------------------------------------------------------------------
# public morphology API
# ---------------------------------------------------------------------------


def erode(mask: np.ndarray, se: StructuringElement = BOX3) -> np.ndarray:
    """Pixel set iff every se-covered input pixel is set (borders erode)."""
    mask = _validate_mask(mask)
    if use_numba():
        out = np.empty_like(mask)
        if _is_box3(se):
            _erode_box3_kernel(mask, out)
        else:
            oy, ox = se.offsets()
            _erode_generic_kernel(mask, oy, ox, out)
        return out
    return _erode_numpy(mask, se)


def dilate(mask: np.ndarray, se: StructuringElement = BOX3) -> np.ndarray:
    """Pixel set iff any se-covered input pixel is set."""
    mask = _validate_mask(mask)
    if use_numba():
        out = np.empty_like(mask)
        if _is_box3(se):
            _dilate_box3_kernel(mask, out)
        else:
            oy, ox = se.offsets()
            _dilate_generic_kernel(mask, oy, ox, out)
        return out
    return _dilate_numpy(mask, se)


def opening(mask: np.ndarray, se: StructuringElement = BOX3) -> np.ndarray:
    """Erosion followed by dilation; removes specks smaller than the element."""
    return dilate(erode(mask, se), se)


def closing(mask: np.ndarray, se: StructuringElement = BOX3) -> np.ndarray:
    """Dilation followed by erosion; fills holes smaller than the element."""
    return erode(dilate(mask, se), se)


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    """One labeled component: inclusive bbox corners and pixel statistics."""

    id: int
    bbox: tuple[int, int, int, int]  # (x_min, y_min, x_max, y_max), inclusive
    area: int
    centroid: tuple[float, float]  # (x, y)


@dataclass(frozen=True)
class InstanceSet:
    """Dense per-pixel labels (0 = background) plus per-instance records."""

    labels: np.ndarray  # (H, W) int32
    instances: tuple[Instance, ...]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def __len__(self) -> int:
        return len(self.instances)

    def mask(self) -> np.ndarray:
        return self.labels > 0

    def instance_mask(self, instance_id: int) -> np.ndarray:
        return self.labels == instance_id


def _stats_from_labels(labels: np.ndarray, count: int) -> tuple[Instance, ...]:
    if count == 0:
        return ()
    ys, xs = np.nonzero(labels)
    ls = labels[ys, xs]
    order = np.argsort(ls, kind="stable")
    ls_s, ys_s, xs_s = ls[order], ys[order], xs[order]
    bounds = np.searchsorted(ls_s, np.arange(1, count + 2))
    starts = bounds[:-1]
    areas = np.diff(bounds)
    x_min = np.minimum.reduceat(xs_s, starts)
    x_max = np.maximum.reduceat(xs_s, starts)
    y_min = np.minimum.reduceat(ys_s, starts)
    y_max = np.maximum.reduceat(ys_s, starts)
    cx = np.add.reduceat(xs_s.astype(np.float64), starts) / areas
    cy = np.add.reduceat(ys_s.astype(np.float64), starts) / areas
    return tuple(
        Instance(
            id=i + 1,
            bbox=(int(x_min[i]), int(y_min[i]), int(x_max[i]), int(y_max[i])),
            area=int(areas[i]),
            centroid=(float(cx[i]), float(cy[i])),
        )
        for i in range(count)
    )


def label_mask(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Dense raster labeling without per-instance statistics."""
    mask = _validate_mask(mask)
    if connectivity not in (4, 8):
        raise ContractError(f"connectivity must be 4 or 8, got {connectivity}")
    eight = connectivity == 8
    if use_numba():
        return _ccl_kernel(mask, eight)
    return _ccl_numpy(mask, eight)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> InstanceSet:
    """Partition a mask into instances under 4- or 8-connectivity."""
    labels, count = label_mask(mask, connectivity)
    return InstanceSet(labels=labels, instances=_stats_from_labels(labels, count))


def largest_component(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Mask of the largest component (ties: earliest in raster order).

    Skips instance statistics, so it stays cheap even when the component
    spans the whole frame. An empty mask comes back empty.
    """
    labels, count = label_mask(mask, connectivity)
    if count == 0:
        return np.zeros_like(mask)
    areas = np.bincount(labels.ravel())
    best = int(np.argmax(areas[1:])) + 1
    return labels == best


def instances_from_labels(labels: np.ndarray) -> InstanceSet:
    """Canonicalize an arbitrary non-negative label raster into an InstanceSet.

    Ids are renumbered densely in order of each label's first pixel in
    row-major scan; the pixel partition is preserved. Used when labels come
    from outside connected_components (synthetic truth, manifest import).
    """
    if labels.ndim != 2:
        raise ContractError("labels must be a 2-D array")
    labels = labels.astype(np.int32, copy=False)
    flat = labels.ravel()
    fg = np.nonzero(flat)[0]
    if fg.size == 0:
        return InstanceSet(labels=np.zeros_like(labels), instances=())
    vals = flat[fg]
    uniq, first = np.unique(vals, return_index=True)
    rank = np.argsort(np.argsort(first, kind="stable"), kind="stable")
    remap = np.zeros(int(uniq.max()) + 1, dtype=np.int32)
    remap[uniq] = rank.astype(np.int32) + 1
    new_labels = remap[labels]
    return InstanceSet(
        labels=new_labels, instances=_stats_from_labels(new_labels, len(uniq))
    )


def filter_min_area(instances: InstanceSet, min_area: int) -> InstanceSet:
    """Drop instances smaller than min_area pixels and relabel densely."""
    if min_area <= 0:
        return instances
    keep = [inst for inst in instances.instances if inst.area >= min_area]
    if len(keep) == len(instances.instances):
        return instances
    remap = np.zeros(len(instances.instances) + 1, dtype=np.int32)
    for new_id, inst in enumerate(keep, start=1):
        remap[inst.id] = new_id
    new_labels = remap[instances.labels]
    renumbered = tuple(
        Instance(id=i + 1, bbox=inst.bbox, area=inst.area, centroid=inst.centroid)
        for i, inst in enumerate(keep)
    )
    return InstanceSet(labels=new_labels, instances=renumbered)
