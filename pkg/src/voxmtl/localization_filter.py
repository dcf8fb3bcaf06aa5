"""Point-cloud variants for downstream registration: drop drivable-area and/or foreground points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud.frame import PointCloudFrame

FILTER_MODES = ("raw", "no_da", "no_fg", "no_da_fg")
_CHANNELS = {"raw": (), "no_da": ("da",), "no_fg": ("fg",), "no_da_fg": ("da", "fg")}


@dataclass(frozen=True)
class FilterStats:
    mode: str
    n_input: int
    n_kept: int
    n_removed_da: int  # removed because of the drivable-area channel
    n_removed_fg: int  # removed because of the foreground channel (may overlap with da)

    @property
    def n_removed(self) -> int:
        return self.n_input - self.n_kept

    def summary(self) -> str:
        frac = self.n_removed / self.n_input if self.n_input else 0.0
        return (
            f"mode={self.mode} input={self.n_input} kept={self.n_kept} removed={self.n_removed} "
            f"removed_fraction={frac:.4f} removed_da={self.n_removed_da} removed_fg={self.n_removed_fg}"
        )


def removal_mask(preds, mode: str, threshold: float = 0.5) -> tuple[np.ndarray, dict]:
    """Boolean per-point removal mask plus the per-channel masks that produced it.

    ``preds`` exposes per-point probability arrays as attributes ``da`` / ``fg``.
    """
    if mode not in FILTER_MODES:
        raise ValueError(f"unknown filter mode {mode!r}; expected one of {', '.join(FILTER_MODES)}")
    per = {}
    for ch in _CHANNELS[mode]:
        p = getattr(preds, ch, None)
        if p is None:
            raise ValueError(f"filter mode {mode!r} needs the {ch!r} prediction channel")
        per[ch] = np.asarray(p, dtype=np.float64).reshape(-1) >= threshold
    if not per:
        n = len(np.asarray(getattr(preds, "fg", getattr(preds, "da", ()))))
        return np.zeros(n, bool), per
    masks = list(per.values())
    return np.logical_or.reduce(masks), per


def filter_point_cloud(frame: PointCloudFrame, preds, mode: str, threshold: float = 0.5):
    """Returns (filtered frame, FilterStats); ``raw`` is the identity."""
    if mode == "raw":
        n = len(frame.points)
        return frame, FilterStats(mode, n, n, 0, 0)
    remove, per = removal_mask(preds, mode, threshold)
    if len(remove) != len(frame.points):
        raise ValueError(f"predictions cover {len(remove)} points, frame has {len(frame.points)}")
    keep = np.nonzero(~remove)[0]
    stats = FilterStats(
        mode,
        len(frame.points),
        len(keep),
        int(per["da"].sum()) if "da" in per else 0,
        int(per["fg"].sum()) if "fg" in per else 0,
    )
    return frame.subset(keep), stats


def voxel_centroids(points, leaf: float) -> np.ndarray:
    """Mean of the points in each occupied cubic cell of edge ``leaf``, in cell-key order."""
    if leaf <= 0:
        raise ValueError("voxel leaf size must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    keys = np.floor(pts / leaf).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    out = np.zeros((len(counts), 3))
    for d in range(3):
        out[:, d] = np.bincount(inverse, weights=pts[:, d], minlength=len(counts))
    return out / counts[:, None]


def export_for_registration(frame, path, voxel_leaf: float | None = None) -> int:
    """Writes "x y z" lines; returns the number of points written."""
    pts = frame.points if isinstance(frame, PointCloudFrame) else np.asarray(frame)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if voxel_leaf is not None:
        pts = voxel_centroids(pts, voxel_leaf)
    np.savetxt(path, pts, fmt="%.9g", delimiter=" ")
    return len(pts)


def read_registration_points(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64, ndmin=2).reshape(-1, 3)
