from __future__ import annotations

import csv
import io

from ..inference import infer
from ..pointcloud.synthetic import downsample_points
from .report import evaluate_point_tasks

DEFAULT_FACTORS = (1, 2, 4, 8, 16, 32)
# (task, metric) pairs reported per downsample factor
SWEEP_COLUMNS = (
    ("FG", "AP"),
    ("DA", "AP"),
    ("GC", "AP"),
    ("IP", "RMSE"),
    ("IP", "MAE"),
    ("GH", "RMSE"),
    ("GH", "MAE"),
)


def robustness_sweep(model, frames, factors=DEFAULT_FACTORS, seed: int = 0, batch_size: int = 4, **infer_kw):
    """Point-wise metrics (All bucket) after keeping every ``factor``-th point.

    Returns a list of dict rows, one per factor, with ``n_points`` and the
    SWEEP_COLUMNS metrics.
    """
    rows = []
    for factor in factors:
        if int(factor) < 1:
            raise ValueError(f"downsample factor must be >= 1, got {factor}")
        sub = [downsample_points(f, int(factor), seed) for f in frames]
        preds = infer(model, sub, batch_size, **infer_kw)
        rep = evaluate_point_tasks(preds, sub)
        row = {"factor": int(factor), "n_points": int(sum(len(f.points) for f in sub))}
        for task, metric in SWEEP_COLUMNS:
            row[f"{task}_{metric}"] = rep.get(task, metric)
        rows.append(row)
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in r.items()})
    return buf.getvalue()
