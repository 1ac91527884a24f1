"""Instance-level evaluation: IoU matching, precision/recall/F1, count and
area error, and detection timing.

Matching is greedy one-to-one by descending IoU at a fixed threshold.
The headline numbers are micro-averaged (tp/fp/fn pooled across images);
macro averaging is available behind a flag. A pixel-level F1 is reported
alongside the instance-level one since the two can tell different stories
when spots merge or fragment.

Edge conventions: precision := 1 when there are no predictions, recall := 1
when there is no truth, so an empty-vs-empty image scores F1 = 1 and any
unmatched instance anywhere drives F1 below 1.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from statistics import fmean
from typing import Sequence

import numpy as np

from .binmorph import InstanceSet
from .errors import ContractError


@dataclass(frozen=True)
class MatchConfig:
    """Instance-matching rule: IoU cutoff and strategy (greedy only)."""

    iou_threshold: float = 0.5
    matching: str = "greedy"

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ContractError(
                f"iou_threshold must be in (0, 1], got {self.iou_threshold}"
            )
        if self.matching != "greedy":
            raise ContractError(f"unknown matching strategy {self.matching!r}")


@dataclass(frozen=True)
class MatchResult:
    """One image's matching: matched (pred, truth, iou) triples plus leftovers."""

    pairs: tuple[tuple[int, int, float], ...]
    fp_ids: tuple[int, ...]  # unmatched prediction ids
    fn_ids: tuple[int, ...]  # unmatched truth ids

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.fp_ids)

    @property
    def fn(self) -> int:
        return len(self.fn_ids)


def pairwise_iou(a: InstanceSet, b: InstanceSet) -> np.ndarray:
    """IoU matrix between two labelings of the same frame, shape (|a|, |b|).

    Intersections come from one joint histogram over pixels where both
    labelings are foreground: one pass over the frame instead of one pass
    per instance pair.
    """
    if a.labels.shape != b.labels.shape:
        raise ContractError(
            f"label rasters differ in shape: {a.labels.shape} vs {b.labels.shape}"
        )
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        return np.zeros((na, nb), dtype=np.float64)
    both = (a.labels > 0) & (b.labels > 0)
    ia = a.labels[both].astype(np.int64) - 1
    ib = b.labels[both].astype(np.int64) - 1
    inter = np.bincount(ia * nb + ib, minlength=na * nb).reshape(na, nb)
    areas_a = np.array([inst.area for inst in a.instances], dtype=np.int64)
    areas_b = np.array([inst.area for inst in b.instances], dtype=np.int64)
    union = areas_a[:, None] + areas_b[None, :] - inter
    return inter / union


def match_instances(
    pred: InstanceSet, truth: InstanceSet, cfg: MatchConfig | None = None
) -> MatchResult:
    """Greedy one-to-one matching by descending IoU.

    Candidate pairs at or above the threshold are taken best-first; IoU ties
    break toward the lower truth id, then the lower pred id, making the
    result order-independent and deterministic.
    """
    if cfg is None:
        cfg = MatchConfig()
    iou = pairwise_iou(pred, truth)
    pi, ti = np.nonzero(iou >= cfg.iou_threshold)
    candidates = sorted(
        zip(pi + 1, ti + 1, iou[pi, ti]),
        key=lambda c: (-c[2], c[1], c[0]),
    )
    used_pred: set[int] = set()
    used_truth: set[int] = set()
    pairs = []
    for pred_id, truth_id, pair_iou in candidates:
        if pred_id in used_pred or truth_id in used_truth:
            continue
        used_pred.add(int(pred_id))
        used_truth.add(int(truth_id))
        pairs.append((int(pred_id), int(truth_id), float(pair_iou)))
    fp_ids = tuple(i for i in range(1, len(pred) + 1) if i not in used_pred)
    fn_ids = tuple(i for i in range(1, len(truth) + 1) if i not in used_truth)
    return MatchResult(pairs=tuple(pairs), fp_ids=fp_ids, fn_ids=fn_ids)


def precision_from_counts(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp > 0 else 1.0


def recall_from_counts(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn > 0 else 1.0


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    p = precision_from_counts(tp, fp)
    r = recall_from_counts(tp, fn)
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class PerImageEval:
    """Matching outcome for one image of the evaluation set."""

    index: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    count_error: int
    area_error: float


@dataclass(frozen=True)
class EvalReport:
    """Aggregate detection quality over an image set."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    count_error: float  # mean |predicted count - true count| per image
    area_error: float  # mean |predicted - true| foreground fraction per image
    pixel_f1: float
    averaging: str  # micro or macro
    iou_threshold: float
    per_image: tuple[PerImageEval, ...]
    per_image_seconds: tuple[float, ...] | None = None

    @property
    def mean_seconds(self) -> float | None:
        if not self.per_image_seconds:
            return None
        return fmean(self.per_image_seconds)

    def to_dict(self) -> dict:
        out = {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "count_error": self.count_error,
            "area_error": self.area_error,
            "pixel_f1": self.pixel_f1,
            "averaging": self.averaging,
            "iou_threshold": self.iou_threshold,
            "per_image": [
                {
                    "index": pi.index,
                    "tp": pi.tp,
                    "fp": pi.fp,
                    "fn": pi.fn,
                    "precision": pi.precision,
                    "recall": pi.recall,
                    "f1": pi.f1,
                    "count_error": pi.count_error,
                    "area_error": pi.area_error,
                }
                for pi in self.per_image
            ],
        }
        if self.per_image_seconds is not None:
            out["per_image_seconds"] = list(self.per_image_seconds)
            out["mean_seconds"] = self.mean_seconds
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_table(self) -> str:
        """Small fixed-width summary table; timings rows appear when present.

        Wall-clock numbers here exclude image decode, so they understate
        end-to-end cost relative to timings that include I/O.
        """
        rows = [
            ("images", f"{len(self.per_image)}"),
            ("iou threshold", f"{self.iou_threshold:g}"),
            ("averaging", self.averaging),
            ("tp / fp / fn", f"{self.tp} / {self.fp} / {self.fn}"),
            ("precision", f"{self.precision:.4f}"),
            ("recall", f"{self.recall:.4f}"),
            ("instance F1", f"{self.f1:.4f}"),
            ("pixel F1", f"{self.pixel_f1:.4f}"),
            ("mean count error", f"{self.count_error:.2f}"),
            ("mean area error", f"{self.area_error:.6f}"),
        ]
        if self.per_image_seconds is not None:
            rows.append(("mean seconds/image", f"{self.mean_seconds:.3f}"))
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
        return "\n".join(lines) + "\n"


def _pixel_counts(pred: InstanceSet, truth: InstanceSet) -> tuple[int, int, int]:
    pm = pred.mask()
    tm = truth.mask()
    tp = int(np.count_nonzero(pm & tm))
    fp = int(np.count_nonzero(pm & ~tm))
    fn = int(np.count_nonzero(~pm & tm))
    return tp, fp, fn


def evaluate(
    preds: Sequence[InstanceSet],
    truths: Sequence[InstanceSet],
    cfg: MatchConfig | None = None,
    macro: bool = False,
    per_image_seconds: Sequence[float] | None = None,
) -> EvalReport:
    """Match every image pair and aggregate precision/recall/F1.

    Micro averaging pools tp/fp/fn across images; macro averages the
    per-image scores instead. Area error compares foreground fractions of
    the whole frame, which needs no leaf segmentation and is symmetric in
    pred/truth.
    """
    if len(preds) != len(truths):
        raise ContractError(
            f"prediction and truth lists differ in length: {len(preds)} vs {len(truths)}"
        )
    if len(preds) == 0:
        raise ContractError("evaluation needs at least one image")
    if cfg is None:
        cfg = MatchConfig()
    if per_image_seconds is not None and len(per_image_seconds) != len(preds):
        raise ContractError("per_image_seconds length does not match image count")

    per_image = []
    pixel_tp = pixel_fp = pixel_fn = 0
    for i, (pred, truth) in enumerate(zip(preds, truths)):
        result = match_instances(pred, truth, cfg)
        tp, fp, fn = result.tp, result.fp, result.fn
        frame = pred.labels.size
        pred_frac = sum(inst.area for inst in pred.instances) / frame
        true_frac = sum(inst.area for inst in truth.instances) / frame
        per_image.append(
            PerImageEval(
                index=i,
                tp=tp,
                fp=fp,
                fn=fn,
                precision=precision_from_counts(tp, fp),
                recall=recall_from_counts(tp, fn),
                f1=f1_from_counts(tp, fp, fn),
                count_error=abs(len(pred) - len(truth)),
                area_error=abs(pred_frac - true_frac),
            )
        )
        ptp, pfp, pfn = _pixel_counts(pred, truth)
        pixel_tp += ptp
        pixel_fp += pfp
        pixel_fn += pfn

    total_tp = sum(pi.tp for pi in per_image)
    total_fp = sum(pi.fp for pi in per_image)
    total_fn = sum(pi.fn for pi in per_image)
    if macro:
        precision = fmean(pi.precision for pi in per_image)
        recall = fmean(pi.recall for pi in per_image)
        f1 = fmean(pi.f1 for pi in per_image)
    else:
        precision = precision_from_counts(total_tp, total_fp)
        recall = recall_from_counts(total_tp, total_fn)
        f1 = f1_from_counts(total_tp, total_fp, total_fn)
    return EvalReport(
        tp=total_tp,
        fp=total_fp,
        fn=total_fn,
        precision=precision,
        recall=recall,
        f1=f1,
        count_error=fmean(pi.count_error for pi in per_image),
        area_error=fmean(pi.area_error for pi in per_image),
        pixel_f1=f1_from_counts(pixel_tp, pixel_fp, pixel_fn),
        averaging="macro" if macro else "micro",
        iou_threshold=cfg.iou_threshold,
        per_image=tuple(per_image),
        per_image_seconds=(
            tuple(float(s) for s in per_image_seconds)
            if per_image_seconds is not None
            else None
        ),
    )


def time_detection(img: np.ndarray, spec) -> float:
    """Wall-clock seconds for one detect call on an in-memory image.

    Excludes image decode by construction. Accepts either a DetectorSpec
    or any callable taking the image.
    """
    if callable(spec):
        run = spec
    else:
        from . import detector as _detector  # deferred: detector imports back here

        def run(image):
            return _detector.detect(image, spec)

    t0 = time.perf_counter()
    run(img)
    return time.perf_counter() - t0
