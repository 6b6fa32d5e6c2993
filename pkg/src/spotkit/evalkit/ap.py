"""Detection-style average precision over IoU thresholds and size buckets.

Protocol: IoU thresholds 0.50:0.05:0.95, greedy score-ordered matching to the
highest-IoU unmatched ground truth of the same category, 101-point
interpolated precision, at most 100 detections per image. Size-bucket metrics
restrict ground truths (and the detections matched to them) by the bucket of
the ground truth's pixel area; unmatched detections stay false positives in
every bucket.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Region, SizeBucket, iou, size_bucket

IOU_THRESHOLDS = tuple((50 + 5 * k) / 100 for k in range(10))
RECALL_LEVELS = tuple(k / 100 for k in range(101))
MAX_DETS_PER_IMAGE = 100


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: Region
    category: str
    score: float


@dataclass(frozen=True)
class GtBox:
    image_id: str
    box: Region
    category: str
    area_px: float


@dataclass(frozen=True)
class ApTable:
    """AP family in [0, 1]; presentation layers report them x100."""

    ap: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    accuracy: float | None = None

    def to_dict(self) -> dict:
        d = {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
        }
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        return d


def _cap_per_image(detections: list[Detection]) -> list[Detection]:
    by_image: dict[str, list[int]] = {}
    for i, d in enumerate(detections):
        by_image.setdefault(d.image_id, []).append(i)
    keep: set[int] = set()
    for indices in by_image.values():
        ranked = sorted(indices, key=lambda i: (-detections[i].score, i))
        keep.update(ranked[:MAX_DETS_PER_IMAGE])
    return [detections[i] for i in sorted(keep)]


def _interpolated_ap(tp_flags: np.ndarray, n_gt: int) -> float:
    """Mean interpolated precision over the 101 recall levels."""
    if n_gt == 0:
        return 0.0
    if tp_flags.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(~tp_flags)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    # Precision envelope: best precision achievable at or beyond each rank.
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    out = 0.0
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    for j in idx:
        if j < precision.size:
            out += precision[j]
    return out / len(RECALL_LEVELS)


def compute_ap(detections: list[Detection], gts: list[GtBox]) -> ApTable:
    """Compute the AP family for normalized-box detections against ground truth.

    Empty inputs yield all-zero metrics. Categories are averaged over those
    present in the ground truth; bucketed means skip categories with no ground
    truth in that bucket.
    """
    if not gts:
        return ApTable(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    capped = _cap_per_image(detections)
    categories = sorted({g.category for g in gts})
    buckets = (SizeBucket.small, SizeBucket.medium, SizeBucket.large)

    # ap_values[cat][t] = AP at IOU_THRESHOLDS[t]; bucket_values[bucket][cat][t]
    ap_values: dict[str, list[float]] = {}
    bucket_values: dict[SizeBucket, dict[str, list[float]]] = {b: {} for b in buckets}

    for cat in categories:
        dets_c = sorted(
            (i for i, d in enumerate(capped) if d.category == cat),
            key=lambda i: (-capped[i].score, i),
        )
        gts_c = [i for i, g in enumerate(gts) if g.category == cat]
        gt_bucket = {i: size_bucket(gts[i].area_px) for i in gts_c}
        gts_by_image: dict[str, list[int]] = {}
        for i in gts_c:
            gts_by_image.setdefault(gts[i].image_id, []).append(i)
        n_gt = len(gts_c)
        n_gt_bucket = {b: sum(1 for i in gts_c if gt_bucket[i] is b) for b in buckets}

        ap_values[cat] = []
        for b in buckets:
            if n_gt_bucket[b] > 0:
                bucket_values[b].setdefault(cat, [])

        for threshold in IOU_THRESHOLDS:
            matched: set[int] = set()
            # matched_gt[k] = gt index for detection dets_c[k], or -1 when unmatched
            matched_gt = np.full(len(dets_c), -1, dtype=np.int64)
            for k, det_idx in enumerate(dets_c):
                det = capped[det_idx]
                best_gt = -1
                best_iou = 0.0
                for gt_idx in gts_by_image.get(det.image_id, ()):
                    if gt_idx in matched:
                        continue
                    overlap = iou(det.box, gts[gt_idx].box)
                    if overlap > best_iou:
                        best_iou = overlap
                        best_gt = gt_idx
                if best_gt >= 0 and best_iou >= threshold:
                    matched.add(best_gt)
                    matched_gt[k] = best_gt
            tp = matched_gt >= 0
            ap_values[cat].append(_interpolated_ap(tp, n_gt))
            for b in buckets:
                if n_gt_bucket[b] == 0:
                    continue
                keep = np.array(
                    [m < 0 or gt_bucket[m] is b for m in matched_gt], dtype=bool
                )
                tp_b = np.array([m >= 0 and gt_bucket[m] is b for m in matched_gt], dtype=bool)
                bucket_values[b][cat].append(_interpolated_ap(tp_b[keep], n_gt_bucket[b]))

    def _mean_all(values: dict[str, list[float]]) -> float:
        if not values:
            return 0.0
        return float(np.mean([v for per_cat in values.values() for v in per_cat]))

    def _mean_at(values: dict[str, list[float]], t_index: int) -> float:
        if not values:
            return 0.0
        return float(np.mean([per_cat[t_index] for per_cat in values.values()]))

    return ApTable(
        ap=_mean_all(ap_values),
        ap50=_mean_at(ap_values, 0),
        ap75=_mean_at(ap_values, IOU_THRESHOLDS.index(0.75)),
        ap_small=_mean_all(bucket_values[SizeBucket.small]),
        ap_medium=_mean_all(bucket_values[SizeBucket.medium]),
        ap_large=_mean_all(bucket_values[SizeBucket.large]),
    )
