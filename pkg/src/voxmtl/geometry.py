"""Oriented box math: residual coding, rotated overlap, point-in-box and NMS.

Boxes are (cx, cy, cz, l, w, h, yaw) with ``l`` measured along the heading.
Array forms use shape (..., 7) in the same column order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BOX_DIM = 7


class InvalidBoxError(ValueError):
    pass


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(theta, dtype=np.float64) + np.pi, 2 * np.pi) - np.pi
    out = np.where(out <= -np.pi, out + 2 * np.pi, out)
    return out if np.ndim(out) else float(out)


def wrap_half_pi(theta):
    """Wrap to (-pi/2, pi/2]."""
    out = np.mod(np.asarray(theta, dtype=np.float64) + np.pi / 2, np.pi) - np.pi / 2
    out = np.where(out <= -np.pi / 2, out + np.pi, out)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box dimensions must be positive, got {self.l, self.w, self.h}")
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.theta])

    @classmethod
    def from_array(cls, a) -> "Box3D":
        a = np.asarray(a, dtype=np.float64)
        return cls(*(float(v) for v in a[:BOX_DIM]))


@dataclass(frozen=True)
class Detection:
    box: Box3D
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _as_boxes(b) -> np.ndarray:
    if isinstance(b, Box3D):
        return b.as_array()
    return np.asarray(b, dtype=np.float64)


def encode_boxes(gt, anchors) -> np.ndarray:
    """Anchor-relative residuals [dx, dy, dz, dl, dw, dh, dtheta].

    Works on single boxes or broadcastable (..., 7) arrays.
    """
    g = _as_boxes(gt)
    a = _as_boxes(anchors)
    if np.any(a[..., 3:6] <= 0):
        raise InvalidBoxError("anchor dimensions must be positive")
    if np.any(g[..., 3:6] <= 0):
        raise InvalidBoxError("ground-truth dimensions must be positive")
    diag = np.sqrt(a[..., 3] ** 2 + a[..., 4] ** 2)
    return np.stack(
        [
            (g[..., 0] - a[..., 0]) / diag,
            (g[..., 1] - a[..., 1]) / diag,
            (g[..., 2] - a[..., 2]) / a[..., 5],
            np.log(g[..., 3] / a[..., 3]),
            np.log(g[..., 4] / a[..., 4]),
            np.log(g[..., 5] / a[..., 5]),
            wrap_half_pi(g[..., 6] - a[..., 6]),
        ],
        axis=-1,
    )


def decode_boxes(res, anchors) -> np.ndarray:
    r = np.asarray(res, dtype=np.float64)
    a = _as_boxes(anchors)
    diag = np.sqrt(a[..., 3] ** 2 + a[..., 4] ** 2)
    return np.stack(
        [
            r[..., 0] * diag + a[..., 0],
            r[..., 1] * diag + a[..., 1],
            r[..., 2] * a[..., 5] + a[..., 2],
            np.exp(r[..., 3]) * a[..., 3],
            np.exp(r[..., 4]) * a[..., 4],
            np.exp(r[..., 5]) * a[..., 5],
            wrap_angle(r[..., 6] + a[..., 6]),
        ],
        axis=-1,
    )


def encode_box(gt: Box3D, anchor: Box3D) -> np.ndarray:
    return encode_boxes(gt, anchor)


def decode_box(res, anchor: Box3D) -> Box3D:
    return Box3D.from_array(decode_boxes(res, anchor))


def bev_corners(box) -> np.ndarray:
    """Counter-clockwise BEV corners, shape (..., 4, 2)."""
    b = _as_boxes(box)
    c, s = np.cos(b[..., 6]), np.sin(b[..., 6])
    hl, hw = b[..., 3] / 2, b[..., 4] / 2
    local = np.stack(
        [np.stack([hl, -hw], -1), np.stack([hl, hw], -1), np.stack([-hl, hw], -1), np.stack([-hl, -hw], -1)],
        axis=-2,
    )
    x = local[..., 0] * c[..., None] - local[..., 1] * s[..., None] + b[..., 0, None]
    y = local[..., 0] * s[..., None] + local[..., 1] * c[..., None] + b[..., 1, None]
    return np.stack([x, y], axis=-1)


def polygon_area(poly) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) / 2.0


def clip_convex(subject, clipper):
    """Sutherland-Hodgman: clip polygon ``subject`` by convex CCW ``clipper``."""
    out = [tuple(p) for p in subject]
    m = len(clipper)
    for i in range(m):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        inp, out = out, []
        prev = inp[-1]
        prev_side = ex * (prev[1] - ay) - ey * (prev[0] - ax)
        for cur in inp:
            side = ex * (cur[1] - ay) - ey * (cur[0] - ax)
            if side >= 0:
                if prev_side < 0:
                    t = prev_side / (prev_side - side)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif prev_side >= 0:
                t = prev_side / (prev_side - side)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, side
    return out


def bev_intersection_area(a, b) -> float:
    a = _as_boxes(a)
    b = _as_boxes(b)
    # circumscribed circles do not touch
    ra = math.hypot(a[3], a[4]) / 2
    rb = math.hypot(b[3], b[4]) / 2
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return 0.0
    pa = bev_corners(a).tolist()
    pb = bev_corners(b).tolist()
    return polygon_area(clip_convex(pa, pb))


def rotated_iou_bev(a, b) -> float:
    a = _as_boxes(a)
    b = _as_boxes(b)
    area_a = a[3] * a[4]
    area_b = b[3] * b[4]
    if area_a <= 0 or area_b <= 0:
        return 0.0
    inter = bev_intersection_area(a, b)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def iou_3d(a, b) -> float:
    a = _as_boxes(a)
    b = _as_boxes(b)
    vol_a = a[3] * a[4] * a[5]
    vol_b = b[3] * b[4] * b[5]
    if vol_a <= 0 or vol_b <= 0:
        return 0.0
    lo = max(a[2] - a[5] / 2, b[2] - b[5] / 2)
    hi = min(a[2] + a[5] / 2, b[2] + b[5] / 2)
    if hi <= lo:
        return 0.0
    inter = bev_intersection_area(a, b) * (hi - lo)
    union = vol_a + vol_b - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def iou_matrix(boxes_a, boxes_b, mode: str = "bev") -> np.ndarray:
    """Pairwise IOU, skipping pairs whose circumscribed circles are apart."""
    A = np.asarray(boxes_a, dtype=np.float64).reshape(-1, BOX_DIM)
    B = np.asarray(boxes_b, dtype=np.float64).reshape(-1, BOX_DIM)
    fn = rotated_iou_bev if mode == "bev" else iou_3d
    out = np.zeros((len(A), len(B)))
    if len(A) == 0 or len(B) == 0:
        return out
    ra = np.hypot(A[:, 3], A[:, 4]) / 2
    rb = np.hypot(B[:, 3], B[:, 4]) / 2
    dist = np.hypot(A[:, None, 0] - B[None, :, 0], A[:, None, 1] - B[None, :, 1])
    for i, j in zip(*np.nonzero(dist <= ra[:, None] + rb[None, :])):
        out[i, j] = fn(A[i], B[j])
    return out


def points_in_box(points, box, eps: float = 1e-9) -> np.ndarray:
    """Closed-box membership for an (N, 3) array of points."""
    b = _as_boxes(box)
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = p - b[:3]
    c, s = math.cos(b[6]), math.sin(b[6])
    u = c * d[:, 0] + s * d[:, 1]
    v = -s * d[:, 0] + c * d[:, 1]
    return (
        (np.abs(u) <= b[3] / 2 + eps)
        & (np.abs(v) <= b[4] / 2 + eps)
        & (np.abs(d[:, 2]) <= b[5] / 2 + eps)
    )


def point_in_box(p, box) -> bool:
    return bool(points_in_box(np.asarray(p, dtype=np.float64)[None, :], box)[0])


def to_box_frame(points, box) -> np.ndarray:
    """Points expressed in the box's canonical frame (heading along +x)."""
    b = _as_boxes(box)
    d = np.asarray(points, dtype=np.float64).reshape(-1, 3) - b[:3]
    c, s = math.cos(b[6]), math.sin(b[6])
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]], axis=1)


def nms(boxes, scores, class_ids, iou_threshold: float) -> list[int]:
    """Greedy per-class suppression on rotated BEV IOU.

    Returns kept indices in score order (ties by lower index).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("nms scores must be finite")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, BOX_DIM)
    class_ids = np.asarray(class_ids)
    order = np.lexsort((np.arange(len(scores)), -scores))
    kept: list[int] = []
    for idx in order:
        suppressed = False
        for k in kept:
            if class_ids[k] == class_ids[idx] and rotated_iou_bev(boxes[k], boxes[idx]) >= iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(int(idx))
    return kept


def nms_detections(dets: list[Detection], iou_threshold: float) -> list[int]:
    if not dets:
        return []
    return nms(
        np.stack([d.box.as_array() for d in dets]),
        [d.score for d in dets],
        [d.class_id for d in dets],
        iou_threshold,
    )
