"""Detection average precision with range buckets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import iou_matrix

RANGE_BUCKETS = (("0-30m", 0.0, 30.0), ("30-50m", 30.0, 50.0), ("50-70m", 50.0, 70.0))
ALL = "All"
N_RECALL_POINTS = 40
# IOU threshold per class index for the headline detection numbers
DEFAULT_IOU_THRESHOLDS = (0.7, 0.5)


def bucket_of(distance, buckets=RANGE_BUCKETS) -> np.ndarray:
    """Index of the bucket for each distance, -1 when outside all buckets. The last edge is closed."""
    d = np.asarray(distance, dtype=np.float64)
    out = np.full(d.shape, -1, dtype=np.int64)
    for i, (_, lo, hi) in enumerate(buckets):
        last = i == len(buckets) - 1
        inside = (d >= lo) & ((d <= hi) if last else (d < hi))
        out[inside & (out < 0)] = i
    return out


def planar_distance(boxes) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    return np.hypot(b[:, 0], b[:, 1])


@dataclass
class APResult:
    ap: dict  # bucket name -> AP in percent, or None when the bucket has no ground truth
    undefined: tuple  # bucket names excluded from mAP

    @property
    def mean(self) -> float | None:
        vals = [v for k, v in self.ap.items() if k != ALL and v is not None]
        return float(np.mean(vals)) if vals else None


def interpolated_ap(tp_flags, n_gt: int, n_points: int = N_RECALL_POINTS) -> float:
    """AP in percent from score-sorted TP flags, sampled at recall k/n_points, k=1..n_points."""
    if n_gt == 0:
        raise ValueError("AP undefined without ground truth")
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    if len(tp) == 0:
        return 0.0
    fp = np.arange(1, len(tp) + 1) - tp
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # envelope: best precision at any recall >= r
    env = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(1, n_points + 1):
        r = k / n_points
        idx = np.searchsorted(recall, r - 1e-12, side="left")
        if idx < len(env):
            total += env[idx]
    return float(100.0 * total / n_points)


def match_frame(det_boxes, det_scores, gt_boxes, threshold: float, mode: str = "bev"):
    """Greedy matching by descending score; returns gt index per detection (-1 = unmatched)."""
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 7)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    scores = np.asarray(det_scores, dtype=np.float64)
    matched = np.full(len(det_boxes), -1, dtype=np.int64)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return matched
    ious = iou_matrix(det_boxes, gt_boxes, mode)
    taken = np.zeros(len(gt_boxes), bool)
    for d in np.lexsort((np.arange(len(scores)), -scores)):
        cand = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(cand))
        if cand[g] >= threshold:
            matched[d] = g
            taken[g] = True
    return matched


def ap_detection(predictions, ground_truth, class_id: int, threshold: float, mode: str = "bev",
                 buckets=RANGE_BUCKETS) -> APResult:
    """Per-bucket AP for one class over a set of frames.

    ``predictions``: per frame (boxes, scores, classes); ``ground_truth``: per
    frame (boxes, classes). Ground truth is bucketed by centroid distance;
    matched detections follow their gt, unmatched ones use their own centroid.
    """
    if len(predictions) != len(ground_truth):
        raise ValueError("predictions and ground truth cover different numbers of frames")
    names = [b[0] for b in buckets] + [ALL]
    rows = {n: {"scores": [], "tp": [], "n_gt": 0} for n in names}
    for (pb, ps, pc), (gb, gc) in zip(predictions, ground_truth):
        pb = np.asarray(pb, dtype=np.float64).reshape(-1, 7)
        ps = np.asarray(ps, dtype=np.float64).reshape(-1)
        dsel = np.asarray(pc).reshape(-1) == class_id
        gsel = np.asarray(gc).reshape(-1) == class_id
        dboxes, dscores = pb[dsel], ps[dsel]
        gboxes = np.asarray(gb, dtype=np.float64).reshape(-1, 7)[gsel]
        matched = match_frame(dboxes, dscores, gboxes, threshold, mode)
        g_bucket = bucket_of(planar_distance(gboxes), buckets)
        d_bucket = np.where(matched >= 0, g_bucket[np.maximum(matched, 0)] if len(gboxes) else -1,
                            bucket_of(planar_distance(dboxes), buckets))
        rows[ALL]["scores"].append(dscores)
        rows[ALL]["tp"].append(matched >= 0)
        rows[ALL]["n_gt"] += len(gboxes)
        for i, (name, _, _) in enumerate(buckets):
            sel = d_bucket == i
            rows[name]["scores"].append(dscores[sel])
            rows[name]["tp"].append(matched[sel] >= 0)
            rows[name]["n_gt"] += int((g_bucket == i).sum())
    ap, undefined = {}, []
    for name in names:
        r = rows[name]
        if r["n_gt"] == 0:
            ap[name] = None
            undefined.append(name)
            continue
        scores = np.concatenate(r["scores"]) if r["scores"] else np.zeros(0)
        tp = np.concatenate(r["tp"]) if r["tp"] else np.zeros(0, bool)
        order = np.argsort(-scores, kind="stable")
        ap[name] = interpolated_ap(tp[order], r["n_gt"])
    return APResult(ap, tuple(undefined))


def mean_ap(predictions, ground_truth, n_classes: int, mode: str = "bev", thresholds=DEFAULT_IOU_THRESHOLDS,
            buckets=RANGE_BUCKETS):
    """Mean over defined (bucket, class) cells; returns (mAP or None, {class: APResult})."""
    results = {c: ap_detection(predictions, ground_truth, c, thresholds[c], mode, buckets) for c in range(n_classes)}
    vals = [v for r in results.values() for k, v in r.ap.items() if k != ALL and v is not None]
    return (float(np.mean(vals)) if vals else None), results

