"""Metric report assembly and rendering (CSV and aligned text)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .detection import ALL, DEFAULT_IOU_THRESHOLDS, RANGE_BUCKETS, ap_detection, bucket_of
from .pointwise import pointwise_metrics, regression_metrics

BUCKET_NAMES = tuple(b[0] for b in RANGE_BUCKETS) + (ALL,)


@dataclass
class MetricReport:
    """Flat (task, metric, bucket) -> value table; None marks an undefined cell."""

    rows: list = field(default_factory=list)

    def add(self, task: str, metric: str, bucket: str, value) -> None:
        self.rows.append((task, metric, bucket, None if value is None else float(value)))

    def get(self, task: str, metric: str, bucket: str = ALL):
        for t, m, b, v in self.rows:
            if (t, m, b) == (task, metric, bucket):
                return v
        raise KeyError((task, metric, bucket))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "metric", "bucket", "value"])
        for t, m, b, v in self.rows:
            w.writerow([t, m, b, "" if v is None else repr(v)])
        return buf.getvalue()

    def to_text(self) -> str:
        """One line per (task, metric) with a column per range bucket."""
        keys = []
        for t, m, _, _ in self.rows:
            if (t, m) not in keys:
                keys.append((t, m))
        buckets = [b for b in BUCKET_NAMES if any(r[2] == b for r in self.rows)]
        extra = sorted({r[2] for r in self.rows} - set(buckets))
        buckets += extra
        table = [["task", "metric"] + buckets]
        for t, m in keys:
            line = [t, m]
            for b in buckets:
                try:
                    v = self.get(t, m, b)
                    line.append("n/a" if v is None else f"{v:.2f}")
                except KeyError:
                    line.append("")
            table.append(line)
        widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
        return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in table) + "\n"

    def write(self, csv_path=None, text_path=None) -> None:
        if csv_path:
            with open(csv_path, "w", newline="") as fh:
                fh.write(self.to_csv())
        if text_path:
            with open(text_path, "w") as fh:
                fh.write(self.to_text())


def _point_distance(frame):
    return np.hypot(frame.points[:, 0], frame.points[:, 1]).astype(np.float64)


def evaluate_point_tasks(preds, frames, report: MetricReport | None = None) -> MetricReport:
    """FG / DA / GC classification, IP (foreground only) and GH regression, per range bucket.

    Only points inside the voxel grid (``valid``) are scored.
    """
    report = report if report is not None else MetricReport()
    valid = np.concatenate([p.valid for p in preds])
    dist = np.concatenate([_point_distance(f) for f in frames])[valid]
    bidx = bucket_of(dist)
    for task in ("fg", "da", "gc"):
        s = np.concatenate([getattr(p, task) for p in preds])[valid]
        y = np.concatenate([getattr(f, task) for f in frames])[valid]
        for i, name in enumerate(BUCKET_NAMES):
            sel = np.ones(len(s), bool) if name == ALL else bidx == i
            res = pointwise_metrics(s[sel], y[sel])
            report.add(task.upper(), "AP", name, res.ap)
            report.add(task.upper(), "IOU", name, res.iou)
            report.add(task.upper(), "Accuracy", name, res.accuracy)
    fg = np.concatenate([f.fg for f in frames])[valid] == 1
    ip = regression_metrics(
        np.concatenate([p.ip for p in preds])[valid], np.concatenate([f.ip for f in frames])[valid], fg, dist
    )
    gh = regression_metrics(np.concatenate([p.gh for p in preds])[valid], np.concatenate([f.gh for f in frames])[valid],
                            None, dist)
    for task, res in (("IP", ip), ("GH", gh)):
        for name in BUCKET_NAMES:
            v = res.get(name)
            report.add(task, "RMSE", name, None if v is None else v[0])
            report.add(task, "MAE", name, None if v is None else v[1])
    return report


def evaluate_detection(preds, frames, class_names, thresholds=DEFAULT_IOU_THRESHOLDS,
                       report: MetricReport | None = None) -> MetricReport:
    report = report if report is not None else MetricReport()
    det = [(p.boxes, p.scores, p.classes) for p in preds]
    gts = [(f.boxes, f.box_classes) for f in frames]
    for mode, label in (("bev", "AP_BEV"), ("3d", "AP_3D")):
        cells = []
        for c, cname in enumerate(class_names):
            r = ap_detection(det, gts, c, thresholds[c], mode)
            for name in BUCKET_NAMES:
                report.add(cname, label, name, r.ap[name])
                if name != ALL and r.ap[name] is not None:
                    cells.append(r.ap[name])
        report.add("OD", "m" + label, ALL, float(np.mean(cells)) if cells else None)
    return report


def evaluate(preds, frames, class_names=("VEHICLE", "PEDESTRIAN"), thresholds=DEFAULT_IOU_THRESHOLDS) -> MetricReport:
    if len(preds) != len(frames):
        raise ValueError(f"{len(preds)} predictions for {len(frames)} frames")
    for i, (p, f) in enumerate(zip(preds, frames)):
        if len(p.fg) != len(f.points):
            raise ValueError(f"frame {i}: prediction covers {len(p.fg)} points, frame has {len(f.points)}")
        if not f.has_labels:
            raise ValueError(f"frame {i} has no labels to evaluate against")
    report = evaluate_detection(preds, frames, class_names, thresholds)
    return evaluate_point_tasks(preds, frames, report)
