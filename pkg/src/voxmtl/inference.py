"""Batched inference, detection decoding and the prediction dump format."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .geometry import decode_boxes, nms
from .network import Model, anchor_classes, build_plan, make_batch
from .pointcloud.frame import PointCloudFrame
from .pointcloud.voxel import scatter_to_points, voxelize

DUMP_VERSION = 1
DEFAULT_SCORE_THRESHOLD = 0.1
DEFAULT_NMS_IOU = 0.1
MAX_CANDIDATES = 500
# bound on decoded log size ratios, keeps exp() finite for untrained heads
LOG_SIZE_CLIP = 4.0


class PredictionDumpError(ValueError):
    pass


@dataclass(eq=False)
class FramePrediction:
    """Detections plus per-point task outputs for one frame.

    Per-point arrays cover every input point; ``valid`` is False for points
    outside the voxel grid (their outputs are zero).
    """

    boxes: np.ndarray  # (D, 7)
    scores: np.ndarray  # (D,)
    classes: np.ndarray  # (D,)
    fg: np.ndarray
    da: np.ndarray
    gc: np.ndarray
    ip: np.ndarray  # (N, 3)
    gh: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_labels(cls, frame: PointCloudFrame) -> "FramePrediction":
        """Ground truth dressed as a prediction (score 1 for every box)."""
        n = len(frame.points)
        return cls(
            frame.boxes.astype(np.float64),
            np.ones(len(frame.boxes)),
            frame.box_classes.astype(np.int64),
            frame.fg.astype(np.float64),
            frame.da.astype(np.float64),
            frame.gc.astype(np.float64),
            frame.ip.astype(np.float64),
            frame.gh.astype(np.float64),
            np.ones(n, bool),
        )

    def subset(self, index) -> "FramePrediction":
        """Per-point outputs restricted to ``index``; detections unchanged."""
        idx = np.asarray(index)
        return FramePrediction(self.boxes, self.scores, self.classes, self.fg[idx], self.da[idx], self.gc[idx],
                               self.ip[idx], self.gh[idx], self.valid[idx])


def decode_detections(cls_prob, box_res, anchors, anchor_cls, score_threshold=DEFAULT_SCORE_THRESHOLD,
                      nms_iou=DEFAULT_NMS_IOU, max_candidates=MAX_CANDIDATES):
    """(H, W, A) scores and residuals -> (boxes, scores, classes) after per-class NMS."""
    scores = np.asarray(cls_prob, dtype=np.float64).reshape(-1)
    res = np.asarray(box_res, dtype=np.float64).reshape(-1, 7)
    flat = np.asarray(anchors, dtype=np.float64).reshape(-1, 7)
    cls = np.broadcast_to(np.asarray(anchor_cls), np.asarray(cls_prob).shape).reshape(-1)
    keep = np.nonzero(scores >= score_threshold)[0]
    if len(keep) > max_candidates:
        keep = keep[np.lexsort((keep, -scores[keep]))[:max_candidates]]
    if len(keep) == 0:
        return np.zeros((0, 7)), np.zeros(0), np.zeros(0, np.int64)
    r = res[keep].copy()
    r[:, 3:6] = np.clip(r[:, 3:6], -LOG_SIZE_CLIP, LOG_SIZE_CLIP)
    boxes = decode_boxes(r, flat[keep])
    kept = nms(boxes, scores[keep], cls[keep], nms_iou)
    return boxes[kept], scores[keep][kept], cls[keep][kept].astype(np.int64)


def infer(model: Model, frames: list[PointCloudFrame], batch_size: int = 4,
          score_threshold=DEFAULT_SCORE_THRESHOLD, nms_iou=DEFAULT_NMS_IOU) -> list[FramePrediction]:
    cfg = model.config
    anchors = model.anchors()
    acls = anchor_classes(cfg)
    out = []
    for start in range(0, len(frames), batch_size):
        chunk = frames[start : start + batch_size]
        voxs = [voxelize(f, cfg.grid) for f in chunk]
        plans = [build_plan(v.coords, v.grid_shape) for v in voxs]
        pred = model.predict(make_batch(voxs, plans))
        offs = list(np.cumsum([0] + [len(v) for v in voxs]))
        cls_prob = pred.cls_prob
        for b, v in enumerate(voxs):
            sl = slice(offs[b], offs[b + 1])
            per_voxel = {
                "fg": pred.fg_prob[sl],
                "da": pred.da_prob[sl],
                "gc": pred.gc_prob[sl],
                "ip": pred.ip[sl],
                "gh": pred.gh[sl],
            }
            pts = {k: scatter_to_points(np.asarray(a, dtype=np.float64), v.point_to_voxel)[0] for k, a in per_voxel.items()}
            boxes, scores, classes = decode_detections(cls_prob[b], pred.box[b], anchors, acls, score_threshold, nms_iou)
            out.append(FramePrediction(boxes, scores, classes, pts["fg"], pts["da"], pts["gc"], pts["ip"], pts["gh"],
                                       v.point_to_voxel >= 0))
    return out


_FIELDS = ("boxes", "scores", "classes", "fg", "da", "gc", "ip", "gh", "valid")


def save_predictions(path, preds: list[FramePrediction], meta: dict | None = None) -> None:
    tensors = {}
    for i, p in enumerate(preds):
        for f in _FIELDS:
            a = getattr(p, f)
            if f == "classes":
                a = np.asarray(a, dtype=np.int64)
            elif f == "valid":
                a = np.asarray(a, dtype=np.uint8)
            else:
                a = np.asarray(a, dtype=np.float64)
            tensors[f"frame{i:05d}/{f}"] = a
    header = {"kind": "predictions", "dump_version": DUMP_VERSION, "n_frames": len(preds), "meta": meta or {}}
    tensorio.save(path, header, tensors)


def load_predictions(path) -> tuple[list[FramePrediction], dict]:
    try:
        header, tensors = tensorio.load(path)
    except (tensorio.TensorFileError, OSError) as exc:
        raise PredictionDumpError(f"cannot read prediction dump {path}: {exc}") from exc
    if header.get("kind") != "predictions" or header.get("dump_version") != DUMP_VERSION:
        raise PredictionDumpError(f"{path} is not a version-{DUMP_VERSION} prediction dump")
    preds = []
    for i in range(int(header["n_frames"])):
        try:
            vals = {f: tensors[f"frame{i:05d}/{f}"] for f in _FIELDS}
        except KeyError as exc:
            raise PredictionDumpError(f"prediction dump {path} lacks {exc.args[0]}") from exc
        vals["valid"] = vals["valid"].astype(bool)
        preds.append(FramePrediction(**vals))
    return preds, header.get("meta", {})
