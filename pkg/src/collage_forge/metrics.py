"""Detection metrics: IoU, greedy matching, 101-point AP, aggregate suite.

Protocol, fixed by this artifact:

* Detections are evaluated per class. Within one frame they are sorted by
  descending score (ties by lower x, then lower y) and matched greedily;
  each detection takes the unmatched ground-truth box with the highest
  IoU at or above the threshold (ties by lower ground-truth index), and
  each ground truth matches at most once.
* AP interpolates precision at the 101 recall points 0.00, 0.01, .., 1.00
  and averages them. A class with no ground truth has undefined AP and is
  excluded from means.
* Size-restricted APs keep only ground truths whose box area falls in the
  range (small < 32*32, medium 32*32..96*96 inclusive, large > 96*96);
  detections matched to out-of-range ground truths are dropped from
  scoring, unmatched detections stay false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import fmean
from typing import Sequence

from .model import Detection, Rect

COCO_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

AREA_SMALL_MAX = 32 * 32  # exclusive
AREA_MEDIUM_MAX = 96 * 96  # inclusive

# Named ranges as half-open integer intervals [lo, hi).
AREA_RANGES = {
    "small": (0, AREA_SMALL_MAX),
    "medium": (AREA_SMALL_MAX, AREA_MEDIUM_MAX + 1),
    "large": (AREA_MEDIUM_MAX + 1, None),
}


def iou(a: Rect, b: Rect) -> float:
    """Intersection over union of two rects; 0.0 when disjoint.

    Integer intersection and union areas divided once, so the result is
    the correctly rounded value of the exact rational.
    """
    inter_w = min(a.x2, b.x2) - max(a.x, b.x)
    inter_h = min(a.y2, b.y2) - max(a.y, b.y)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class GroundTruth:
    """One ground-truth box for evaluation."""

    video_id: str
    frame_index: int
    rect: Rect
    species: str

    @property
    def frame_key(self) -> tuple[str, int]:
        return (self.video_id, self.frame_index)


def _protocol_order(dets: Sequence[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (-d.score, d.rect.x, d.rect.y))


def match_with_refs(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], thresh: float
) -> list[tuple[Detection, GroundTruth | None]]:
    """Greedy single-frame, single-class matching; see module docstring.

    Returns (detection, matched ground truth or None) pairs in protocol
    order.
    """
    remaining = list(range(len(gts)))
    out: list[tuple[Detection, GroundTruth | None]] = []
    for det in _protocol_order(dets):
        best_idx = None
        best_iou = 0.0
        for idx in remaining:
            value = iou(det.rect, gts[idx].rect)
            if value >= thresh and value > best_iou:
                best_iou = value
                best_idx = idx
        if best_idx is None:
            out.append((det, None))
        else:
            remaining.remove(best_idx)
            out.append((det, gts[best_idx]))
    return out


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], thresh: float
) -> list[tuple[Detection, bool]]:
    """True/false positive flags in protocol order for one frame and class."""
    return [(det, gt is not None) for det, gt in match_with_refs(dets, gts, thresh)]


def average_precision(
    scored_flags: Sequence[tuple[float, bool]], n_gt: int
) -> float | None:
    """101-point interpolated average precision.

    ``scored_flags`` holds (score, is_true_positive) pairs; order does not
    matter, they are re-sorted by descending score (stable). Returns None
    when there is no ground truth.
    """
    if n_gt == 0:
        return None
    if n_gt < 0:
        raise ValueError(f"n_gt must be >= 0, got {n_gt}")
    pairs = sorted(scored_flags, key=lambda sf: -sf[0])
    curve: list[tuple[float, float]] = []
    tp = fp = 0
    for _, is_tp in pairs:
        if is_tp:
            tp += 1
        else:
            fp += 1
        curve.append((tp / n_gt, tp / (tp + fp)))

    total = 0.0
    best = 0.0
    idx = len(curve) - 1
    for i in range(100, -1, -1):
        recall_point = i / 100
        while idx >= 0 and curve[idx][0] >= recall_point:
            best = max(best, curve[idx][1])
            idx -= 1
        total += best
    return total / 101


@dataclass(frozen=True)
class EvalConfig:
    """Thresholds and size ranges driving an evaluation."""

    iou_thresholds: tuple[float, ...] = (0.5,)
    area_ranges: dict[str, tuple[int, int | None]] = field(
        default_factory=lambda: dict(AREA_RANGES)
    )

    def __post_init__(self):
        if not self.iou_thresholds:
            raise ValueError("at least one IoU threshold is required")
        for t in self.iou_thresholds:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU thresholds must lie in (0, 1], got {t}")
        if list(self.iou_thresholds) != sorted(set(self.iou_thresholds)):
            raise ValueError("IoU thresholds must be strictly increasing")

    @classmethod
    def full_suite(cls) -> "EvalConfig":
        return cls(iou_thresholds=COCO_THRESHOLDS)


@dataclass(frozen=True)
class ApSuite:
    """COCO-style aggregate values; None marks an undefined metric."""

    ap50: float | None
    ap75: float | None
    ap_50_95: float | None
    ap_small: float | None
    ap_medium: float | None
    ap_large: float | None


@dataclass(frozen=True)
class EvalResult:
    per_class_ap: dict[str, float | None]
    mean_ap: float | None
    ap_suite: ApSuite


def _mean_defined(values: Sequence[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return fmean(defined) if defined else None


def _in_range(area: int, bounds: tuple[int, int | None]) -> bool:
    lo, hi = bounds
    return area >= lo and (hi is None or area < hi)


def evaluate(
    gts: Sequence[GroundTruth], dets: Sequence[Detection], cfg: EvalConfig = EvalConfig()
) -> EvalResult:
    """Evaluate detections against ground truth.

    ``mean_ap`` and ``per_class_ap`` are always computed at threshold 0.5
    over the classes present in the ground truth. AP75 and AP50:95 appear
    when the configured thresholds cover them; the size-restricted APs
    average over the configured thresholds. Empty ground truth yields an
    all-undefined result.
    """
    classes = sorted({gt.species for gt in gts})
    if not classes:
        return EvalResult({}, None, ApSuite(None, None, None, None, None, None))

    gts_by_class: dict[str, list[GroundTruth]] = {c: [] for c in classes}
    for gt in gts:
        gts_by_class[gt.species].append(gt)
    dets_by_class: dict[str, list[Detection]] = {c: [] for c in classes}
    for det in dets:
        if det.species in dets_by_class:
            dets_by_class[det.species].append(det)

    # (species, threshold) -> pooled (score, matched gt or None) across frames.
    pool_cache: dict[tuple[str, float], list[tuple[float, GroundTruth | None]]] = {}

    def pooled(species: str, thresh: float) -> list[tuple[float, GroundTruth | None]]:
        key = (species, thresh)
        cached = pool_cache.get(key)
        if cached is not None:
            return cached
        gts_by_frame: dict[tuple[str, int], list[GroundTruth]] = {}
        for gt in gts_by_class[species]:
            gts_by_frame.setdefault(gt.frame_key, []).append(gt)
        dets_by_frame: dict[tuple[str, int], list[Detection]] = {}
        for det in dets_by_class[species]:
            dets_by_frame.setdefault((det.frame.video_id, det.frame.frame_index), []).append(det)
        pool: list[tuple[float, GroundTruth | None]] = []
        for frame_key in sorted(gts_by_frame.keys() | dets_by_frame.keys()):
            frame_gts = gts_by_frame.get(frame_key, [])
            frame_dets = dets_by_frame.get(frame_key, [])
            for det, gt in match_with_refs(frame_dets, frame_gts, thresh):
                pool.append((det.score, gt))
        pool_cache[key] = pool
        return pool

    def class_ap(
        species: str, thresh: float, bounds: tuple[int, int | None] | None = None
    ) -> float | None:
        class_gts = gts_by_class[species]
        if bounds is None:
            n_gt = len(class_gts)
            pairs = [(score, gt is not None) for score, gt in pooled(species, thresh)]
        else:
            n_gt = sum(1 for gt in class_gts if _in_range(gt.rect.area, bounds))
            pairs = []
            for score, gt in pooled(species, thresh):
                if gt is None:
                    pairs.append((score, False))
                elif _in_range(gt.rect.area, bounds):
                    pairs.append((score, True))
                # matched to an out-of-range ground truth: dropped
        return average_precision(pairs, n_gt)

    per_class_ap = {species: class_ap(species, 0.5) for species in classes}
    mean_ap = _mean_defined(list(per_class_ap.values()))

    def mean_over(thresholds: Sequence[float], bounds=None) -> float | None:
        per_threshold = [
            _mean_defined([class_ap(species, t, bounds) for species in classes])
            for t in thresholds
        ]
        return _mean_defined(per_threshold)

    ap75 = mean_over([0.75]) if 0.75 in cfg.iou_thresholds else None
    ap_50_95 = (
        mean_over(cfg.iou_thresholds) if tuple(cfg.iou_thresholds) == COCO_THRESHOLDS else None
    )
    suite = ApSuite(
        ap50=mean_ap,
        ap75=ap75,
        ap_50_95=ap_50_95,
        ap_small=mean_over(cfg.iou_thresholds, cfg.area_ranges["small"]),
        ap_medium=mean_over(cfg.iou_thresholds, cfg.area_ranges["medium"]),
        ap_large=mean_over(cfg.iou_thresholds, cfg.area_ranges["large"]),
    )
    return EvalResult(per_class_ap, mean_ap, suite)


# --- manifest adapters --------------------------------------------------------


def gt_boxes_from_manifest(manifest: dict) -> list[GroundTruth]:
    """Extract ground-truth boxes from a COCO-style manifest dict."""
    images = {record["id"]: record for record in manifest.get("images", [])}
    categories = {record["id"]: record["name"] for record in manifest.get("categories", [])}
    out = []
    for ann in manifest.get("annotations", []):
        image = images[ann["image_id"]]
        x, y, w, h = ann["bbox"]
        out.append(
            GroundTruth(
                video_id=image.get("video_id", str(image["id"])),
                frame_index=image.get("frame_index", image["id"]),
                rect=Rect(int(x), int(y), int(w), int(h)),
                species=categories[ann["category_id"]],
            )
        )
    return out


def format_report(result: EvalResult, full_suite: bool = False) -> str:
    """Plain-text metrics report, one row per aggregate value."""

    def fmt(value: float | None) -> str:
        return "undefined" if value is None else f"{value:.3f}"

    lines = [f"mAP@0.5   {fmt(result.mean_ap)}"]
    if full_suite:
        suite = result.ap_suite
        lines = [
            f"AP50:95   {fmt(suite.ap_50_95)}",
            f"AP50      {fmt(suite.ap50)}",
            f"AP75      {fmt(suite.ap75)}",
            f"AP_S      {fmt(suite.ap_small)}",
            f"AP_M      {fmt(suite.ap_medium)}",
            f"AP_L      {fmt(suite.ap_large)}",
        ]
    for species in sorted(result.per_class_ap):
        lines.append(f"AP@0.5[{species}]  {fmt(result.per_class_ap[species])}")
    return "\n".join(lines)
