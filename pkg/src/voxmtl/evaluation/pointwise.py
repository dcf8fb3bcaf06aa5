"""Point-wise classification and regression metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detection import RANGE_BUCKETS, bucket_of


@dataclass(frozen=True)
class ClassificationScores:
    ap: float | None  # percent; None when labels are all one class
    iou: float | None  # percent; None when there are no positives predicted or labeled
    accuracy: float | None  # percent; None on an empty set


def average_precision(scores, labels) -> float | None:
    """All-point AP in percent over distinct score thresholds; None if labels are single-class."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        return None
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # only the last index of each run of tied scores is a threshold
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return 100.0 * float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def pointwise_metrics(scores, labels, threshold: float = 0.5) -> ClassificationScores:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.size and (s.min() < 0 or s.max() > 1):
        raise ValueError("scores must lie in [0, 1]")
    if len(s) == 0:
        return ClassificationScores(None, None, None)
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = len(y) - tp - fp - fn
    denom = tp + fp + fn
    iou = 100.0 * tp / denom if denom else None
    return ClassificationScores(average_precision(s, y), iou, 100.0 * (tp + tn) / len(y))


def regression_metrics(pred, target, mask=None, distance=None, buckets=RANGE_BUCKETS) -> dict:
    """{bucket name: (RMSE, MAE) or None when empty}, plus "All".

    Vector-valued rows (e.g. part locations) use the per-component error.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
    n = len(p)
    m = np.ones(n, bool) if mask is None else np.asarray(mask, bool).reshape(n)
    err = (p - t).reshape(n, -1)
    out = {}

    def fold(sel):
        e = err[sel]
        if e.size == 0:
            return None
        return float(np.sqrt(np.mean(e**2))), float(np.mean(np.abs(e)))

    if distance is not None:
        b = bucket_of(distance, buckets)
        for i, (name, _, _) in enumerate(buckets):
            out[name] = fold(m & (b == i))
    out["All"] = fold(m)
    return out
