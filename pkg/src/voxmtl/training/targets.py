from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import encode_boxes, iou_matrix
from ..pointcloud.frame import PointCloudFrame
from ..pointcloud.voxel import VoxelizedFrame

# (positive, negative) BEV IOU thresholds per class index
MATCH_THRESHOLDS = ((0.6, 0.45), (0.5, 0.35))

IGNORE = -1


@dataclass(frozen=True, eq=False)
class PointTargets:
    fg: np.ndarray
    da: np.ndarray
    gc: np.ndarray
    gh: np.ndarray
    ip: np.ndarray  # (V, 3)
    ip_valid: np.ndarray  # bool, == fg


@dataclass(frozen=True, eq=False)
class AnchorTargets:
    labels: np.ndarray  # (H, W, A) in {1, 0, IGNORE}
    box: np.ndarray  # (H, W, A, 7) residual targets
    box_valid: np.ndarray  # (H, W, A) bool
    matched_gt: np.ndarray  # (H, W, A) gt index or -1


def _vote(labels, p2v, n_vox):
    valid = p2v >= 0
    pos = np.bincount(p2v[valid], weights=labels[valid].astype(np.float64), minlength=n_vox)
    cnt = np.bincount(p2v[valid], minlength=n_vox)
    return (2 * pos >= cnt).astype(np.uint8) & (cnt > 0)


def assign_point_targets(frame: PointCloudFrame, vox: VoxelizedFrame) -> PointTargets:
    """Majority vote per voxel (ties positive); mean gh; mean ip over foreground members."""
    if not frame.has_labels:
        raise ValueError("point target assignment needs a labeled frame")
    p2v = vox.point_to_voxel
    n = len(vox)
    valid = p2v >= 0
    fg = _vote(frame.fg, p2v, n)
    da = _vote(frame.da, p2v, n)
    gc = _vote(frame.gc, p2v, n)
    cnt = np.bincount(p2v[valid], minlength=n).astype(np.float64)
    gh = np.bincount(p2v[valid], weights=frame.gh[valid].astype(np.float64), minlength=n) / np.maximum(cnt, 1)
    fgp = valid & (frame.fg == 1)
    fcnt = np.bincount(p2v[fgp], minlength=n).astype(np.float64)
    ip = np.zeros((n, 3))
    for d in range(3):
        ip[:, d] = np.bincount(p2v[fgp], weights=frame.ip[fgp, d].astype(np.float64), minlength=n)
    ip /= np.maximum(fcnt, 1)[:, None]
    ip_valid = (fg == 1) & (fcnt > 0)
    return PointTargets(fg, da, gc, gh, ip, ip_valid)


def assign_anchor_targets(anchors, anchor_cls, gt_boxes, gt_classes, thresholds=MATCH_THRESHOLDS) -> AnchorTargets:
    """Rotated-BEV-IOU matching of class-specific anchors to ground truth.

    Positive at IOU >= pos threshold, negative below neg threshold, ignored in
    between; each gt additionally claims its best anchor.
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    grid_shape = anchors.shape[:-1]
    H, W, A = grid_shape
    flat = anchors.reshape(-1, 7)
    cls_flat = np.broadcast_to(np.asarray(anchor_cls), (H, W, A)).reshape(-1)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 7)
    gt_classes = np.asarray(gt_classes).reshape(-1)
    n = len(flat)
    labels = np.zeros(n, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    best_iou = np.zeros(n)
    if len(gt_boxes):
        ious = np.zeros((n, len(gt_boxes)))
        for c in np.unique(gt_classes):
            a_idx = np.nonzero(cls_flat == c)[0]
            g_idx = np.nonzero(gt_classes == c)[0]
            ious[np.ix_(a_idx, g_idx)] = iou_matrix(flat[a_idx], gt_boxes[g_idx], "bev")
        best_iou = ious.max(axis=1)
        matched = np.where(best_iou > 0, ious.argmax(axis=1), -1)
        pos_thr = np.array([thresholds[c][0] for c in cls_flat])
        neg_thr = np.array([thresholds[c][1] for c in cls_flat])
        labels[:] = IGNORE
        labels[best_iou >= pos_thr] = 1
        labels[best_iou < neg_thr] = 0
        for g in range(len(gt_boxes)):
            col = np.where(cls_flat == gt_classes[g], ious[:, g], -1.0)
            if col.max() <= 0:
                # gt overlaps no anchor: fall back to the nearest same-class anchor
                same = cls_flat == gt_classes[g]
                d = np.hypot(flat[:, 0] - gt_boxes[g, 0], flat[:, 1] - gt_boxes[g, 1])
                best = int(np.argmin(np.where(same, d, np.inf)))
            else:
                best = int(np.argmax(col))
            labels[best] = 1
            matched[best] = g
    box = np.zeros((n, 7))
    valid = labels == 1
    if valid.any():
        box[valid] = encode_boxes(gt_boxes[matched[valid]], flat[valid])
    return AnchorTargets(
        labels.reshape(grid_shape),
        box.reshape(grid_shape + (7,)),
        valid.reshape(grid_shape),
        matched.reshape(grid_shape),
    )


def anchor_statistics(frames, n_classes: int = 2, defaults=((4.5, 1.9, 1.6), (0.7, 0.7, 1.75)), default_z=(0.8, 0.9)):
    """Per-class mean (l, w, h) and mean box center height over ground truth."""
    sizes, zs = [], []
    for c in range(n_classes):
        rows = [f.boxes[f.box_classes == c].astype(np.float64) for f in frames]
        rows = np.concatenate(rows) if rows else np.zeros((0, 7))
        if len(rows):
            sizes.append(tuple(float(v) for v in rows[:, 3:6].mean(axis=0)))
            zs.append(float(rows[:, 2].mean()))
        else:
            sizes.append(tuple(defaults[c]))
            zs.append(float(default_z[c]))
    return tuple(sizes), tuple(zs)
