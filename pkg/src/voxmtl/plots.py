"""File-only figures for the report commands (Agg backend, no display)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .training.losses import TASKS  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)


def plot_loss_curves(rows, path, smooth: int = 10) -> None:
    """Per-task and total loss against step on a log axis, with a moving average."""
    steps = [r["step"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        for key in ["total"] + [f"loss_{t}" for t in TASKS]:
            vals = [max(float(r[key]), 1e-12) for r in rows]
            k = max(1, min(smooth, len(vals)))
            avg = [sum(vals[max(0, i - k + 1) : i + 1]) / len(vals[max(0, i - k + 1) : i + 1]) for i in range(len(vals))]
            ax.plot(steps, avg, lw=1.6 if key == "total" else 1.0, label=key.replace("loss_", ""))
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(ncol=4, frameon=False)
        _save(fig, path)


def plot_sweep(rows, path) -> None:
    """Classification AP (left) and regression errors (right) against downsample factor."""
    factors = [r["factor"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        for key in ("FG_AP", "DA_AP", "GC_AP"):
            a1.plot(factors, [r[key] if r[key] is not None else float("nan") for r in rows], marker="o", label=key[:2])
        a1.set_ylabel("AP (%)")
        for key in ("IP_RMSE", "GH_RMSE"):
            a2.plot(factors, [r[key] if r[key] is not None else float("nan") for r in rows], marker="s", label=key[:2])
        a2.set_ylabel("RMSE")
        for ax in (a1, a2):
            ax.set_xscale("log", base=2)
            ax.set_xticks(factors)
            ax.set_xticklabels([str(f) for f in factors])
            ax.set_xlabel("downsample factor")
            ax.legend(frameon=False)
        _save(fig, path)


def plot_sigma(rows, path) -> None:
    """Learned task variances next to the task losses they should track."""
    steps = [r["step"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        for i, t in enumerate(TASKS):
            color = f"C{i}"
            ax.plot(steps, [r[f"sigma2_{t}"] for r in rows], color=color, lw=1.4, label=f"sigma2 {t}")
            ax.plot(steps, [max(r[f"loss_{t}"] * r[f"weight_{t}"], 1e-12) for r in rows], color=color, lw=0.6, alpha=0.5)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.legend(ncol=3, frameon=False)
        _save(fig, path)


def plot_metrics(report, path, metric: str = "AP") -> None:
    """Grouped bars of one metric per task across range buckets; undefined cells are left empty."""
    keys, buckets = [], []
    for t, m, b, _ in report.rows:
        if m != metric:
            continue
        if t not in keys:
            keys.append(t)
        if b not in buckets:
            buckets.append(b)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        width = 0.8 / max(len(buckets), 1)
        for j, b in enumerate(buckets):
            vals = []
            for t in keys:
                try:
                    v = report.get(t, metric, b)
                except KeyError:
                    v = None
                vals.append(float("nan") if v is None else v)
            ax.bar([i + (j - (len(buckets) - 1) / 2) * width for i in range(len(keys))], vals, width, label=b)
        ax.set_xticks(range(len(keys)))
        ax.set_xticklabels(keys)
        ax.set_ylabel(f"{metric} (%)")
        ax.set_ylim(0, 100)
        ax.legend(ncol=len(buckets), frameon=False, fontsize=7)
        _save(fig, path)
