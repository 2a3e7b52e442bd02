"""Independent brute-force references the tests check the package against.

Everything here is deliberately written the plain way (per-element scans,
pixel sets, full-canvas painting, Fraction arithmetic) and shares no
geometry or protocol code with the package.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from collage_forge.metrics import AREA_SMALL_MAX, AREA_MEDIUM_MAX
from collage_forge.model import Rect


def mine_survivor_keys(frames, cabof, buffer_ms):
    """Per-frame membership check: survive iff |t - c| > buffer for all
    same-video count events. Vectorized per video but otherwise exhaustive."""
    stamps_by_video = {}
    for label in cabof:
        stamps_by_video.setdefault(label.video_id, []).append(label.timestamp.millis)
    survivors = set()
    by_video = {}
    for frame in frames:
        by_video.setdefault(frame.video_id, []).append(frame)
    for video_id, video_frames in by_video.items():
        stamps = np.asarray(stamps_by_video.get(video_id, []), dtype=np.int64)
        times = np.asarray([f.timestamp.millis for f in video_frames], dtype=np.int64)
        if stamps.size == 0:
            keep = np.ones(len(video_frames), dtype=bool)
        else:
            keep = np.ones(len(video_frames), dtype=bool)
            chunk = 20_000
            for lo in range(0, len(times), chunk):
                block = times[lo : lo + chunk]
                dist = np.abs(block[:, None] - stamps[None, :]).min(axis=1)
                keep[lo : lo + chunk] = dist > buffer_ms
        for frame, kept in zip(video_frames, keep):
            if kept:
                survivors.add(frame.key)
    return survivors


def visible_pixel_counts(placements, width, height):
    """Full-canvas painting: visible pixels per paint_order value."""
    canvas = np.full((height, width), -1, dtype=np.int32)
    ordered = sorted(placements, key=lambda p: p.paint_order)
    for placement in ordered:
        d = placement.dest
        canvas[d.y : d.y2, d.x : d.x2] = placement.paint_order
    return {
        p.paint_order: int(np.count_nonzero(canvas == p.paint_order)) for p in ordered
    }


def pixel_cells(rect: Rect):
    return {(x, y) for x in range(rect.x, rect.x2) for y in range(rect.y, rect.y2)}


def iou_pixels(a: Rect, b: Rect) -> Fraction:
    """IoU by literally counting pixel cells; only for small rects."""
    ca, cb = pixel_cells(a), pixel_cells(b)
    return Fraction(len(ca & cb), len(ca | cb))


def match_pairs(dets, gts, thresh):
    """Greedy matching reference using pixel-count IoU.

    Detections ordered by (-score, x, y); each takes the unmatched ground
    truth with the highest IoU >= thresh (lowest index on ties). The IoU
    values are computed by pixel counting but compared as floats, because
    the matching contract is defined over float thresholds.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].rect.x, dets[i].rect.y))
    taken = set()
    result = []
    for i in order:
        best = None
        best_iou = 0.0
        for j in range(len(gts)):
            if j in taken:
                continue
            value = float(iou_pixels(dets[i].rect, gts[j].rect))
            if value >= thresh and value > best_iou:
                best, best_iou = j, value
        if best is None:
            result.append((dets[i], None))
        else:
            taken.add(best)
            result.append((dets[i], best))
    return result


def average_precision_101(pairs, n_gt):
    """Interpolated AP over the 101-point recall grid, exact Fractions."""
    if n_gt == 0:
        return None
    ordered = sorted(pairs, key=lambda sf: -sf[0])
    points = []
    tp = fp = 0
    for _, is_tp in ordered:
        tp, fp = tp + bool(is_tp), fp + (not is_tp)
        points.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    total = Fraction(0)
    for i in range(101):
        grid = Fraction(i, 100)
        candidates = [prec for rec, prec in points if rec >= grid]
        total += max(candidates) if candidates else Fraction(0)
    return float(total / 101)


def _in_named_range(area, name):
    if name == "small":
        return area < AREA_SMALL_MAX
    if name == "medium":
        return AREA_SMALL_MAX <= area <= AREA_MEDIUM_MAX
    if name == "large":
        return area > AREA_MEDIUM_MAX
    raise ValueError(name)


def evaluate_reference(gts, dets, thresholds):
    """Straight-line reimplementation of the whole evaluation.

    Returns a dict with per-class AP at 0.5, the class mean at 0.5, the
    mean over the given thresholds, and size-restricted means ("small",
    "medium", "large"). Undefined values are None.
    """

    def frame_key(obj):
        try:
            return obj.frame_key
        except AttributeError:
            return (obj.frame.video_id, obj.frame.frame_index)

    classes = sorted({g.species for g in gts})

    def class_pairs(species, thresh):
        class_gts = [g for g in gts if g.species == species]
        class_dets = [d for d in dets if d.species == species]
        keys = sorted({frame_key(g) for g in class_gts} | {frame_key(d) for d in class_dets})
        pool = []
        for key in keys:
            f_gts = [g for g in class_gts if frame_key(g) == key]
            f_dets = [d for d in class_dets if frame_key(d) == key]
            for det, gt_idx in match_pairs(f_dets, f_gts, thresh):
                pool.append((det.score, None if gt_idx is None else f_gts[gt_idx]))
        return pool

    def class_ap(species, thresh, range_name=None):
        class_gts = [g for g in gts if g.species == species]
        pool = class_pairs(species, thresh)
        if range_name is None:
            n_gt = len(class_gts)
            pairs = [(score, gt is not None) for score, gt in pool]
        else:
            n_gt = sum(1 for g in class_gts if _in_named_range(g.rect.area, range_name))
            pairs = []
            for score, gt in pool:
                if gt is None:
                    pairs.append((score, False))
                elif _in_named_range(gt.rect.area, range_name):
                    pairs.append((score, True))
        return average_precision_101(pairs, n_gt)

    def mean(values):
        defined = [v for v in values if v is not None]
        return sum(defined) / len(defined) if defined else None

    per_class = {c: class_ap(c, 0.5) for c in classes}
    out = {
        "per_class_ap": per_class,
        "mean_ap": mean(list(per_class.values())),
        "mean_over_thresholds": mean(
            [mean([class_ap(c, t) for c in classes]) for t in thresholds]
        ),
    }
    for name in ("small", "medium", "large"):
        out[name] = mean(
            [mean([class_ap(c, t, name) for c in classes]) for t in thresholds]
        )
    return out
