from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frame import PointCloudFrame


@dataclass(frozen=True)
class VoxelGridSpec:
    range_min: tuple[float, float, float] = (0.0, -40.0, -1.5)
    range_max: tuple[float, float, float] = (70.4, 40.0, 4.0)
    voxel_size: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "range_min", tuple(float(v) for v in self.range_min))
        object.__setattr__(self, "range_max", tuple(float(v) for v in self.range_max))
        if len(self.range_min) != 3 or len(self.range_max) != 3:
            raise ValueError("grid ranges must be 3-vectors")
        if any(hi <= lo for lo, hi in zip(self.range_min, self.range_max)):
            raise ValueError(f"range_max must exceed range_min per axis: {self.range_min} {self.range_max}")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        dims = []
        for lo, hi in zip(self.range_min, self.range_max):
            n = (hi - lo) / self.voxel_size
            dims.append(int(round(n)) if abs(n - round(n)) < 1e-6 else int(math.ceil(n)))
        return tuple(dims)


FRONT_VIEW = VoxelGridSpec((0.0, -40.0, -1.5), (70.4, 40.0, 4.0), 0.1)
FULL_RANGE = VoxelGridSpec((-70.4, -70.4, -1.5), (70.4, 70.4, 4.0), 0.1)


@dataclass(frozen=True, eq=False)
class VoxelizedFrame:
    """Unique voxel coords (lexicographic), mean-position features and point map."""

    coords: np.ndarray  # (V, 3) int32
    features: np.ndarray  # (V, 3) float64
    counts: np.ndarray  # (V,) int64
    point_to_voxel: np.ndarray  # (N,) int64, -1 when out of range
    grid_shape: tuple[int, int, int]

    def __len__(self):
        return len(self.coords)


def voxelize(frame: PointCloudFrame | np.ndarray, spec: VoxelGridSpec) -> VoxelizedFrame:
    pts = frame.points if isinstance(frame, PointCloudFrame) else np.asarray(frame, dtype=np.float32)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    lo = np.array(spec.range_min)
    hi = np.array(spec.range_max)
    shape = np.array(spec.grid_shape)
    idx = np.floor((pts - lo) / spec.voxel_size).astype(np.int64)
    valid = np.all((pts >= lo) & (pts < hi) & (idx >= 0) & (idx < shape), axis=1)
    p2v = np.full(len(pts), -1, dtype=np.int64)
    if not valid.any():
        return VoxelizedFrame(
            np.zeros((0, 3), np.int32), np.zeros((0, 3)), np.zeros(0, np.int64), p2v, tuple(int(s) for s in shape)
        )
    vi = idx[valid]
    keys = (vi[:, 0] * shape[1] + vi[:, 1]) * shape[2] + vi[:, 2]
    ukeys, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    coords = np.stack(
        [ukeys // (shape[1] * shape[2]), (ukeys // shape[2]) % shape[1], ukeys % shape[2]], axis=1
    ).astype(np.int32)
    sums = np.zeros((len(ukeys), 3))
    for d in range(3):
        sums[:, d] = np.bincount(inverse, weights=pts[valid, d], minlength=len(ukeys))
    p2v[valid] = inverse
    return VoxelizedFrame(coords, sums / counts[:, None], counts, p2v, tuple(int(s) for s in shape))


def scatter_to_points(voxel_values, point_to_voxel):
    """Per-point copy of voxel values; returns (values, valid_mask).

    Out-of-range points get zeros and ``valid_mask == False``.
    """
    vals = np.asarray(voxel_values)
    p2v = np.asarray(point_to_voxel)
    valid = p2v >= 0
    out = np.zeros((len(p2v),) + vals.shape[1:], dtype=vals.dtype)
    out[valid] = vals[p2v[valid]]
    return out, valid


def gather_mean(point_values, point_to_voxel, n_voxels: int):
    """Mean of point values per voxel (inverse of :func:`scatter_to_points` for singletons)."""
    vals = np.asarray(point_values, dtype=np.float64)
    p2v = np.asarray(point_to_voxel)
    valid = p2v >= 0
    flat = vals.reshape(len(vals), -1)[valid]
    cnt = np.bincount(p2v[valid], minlength=n_voxels).astype(np.float64)
    out = np.zeros((n_voxels, flat.shape[1]))
    for d in range(flat.shape[1]):
        out[:, d] = np.bincount(p2v[valid], weights=flat[:, d], minlength=n_voxels)
    out /= np.maximum(cnt, 1)[:, None]
    return out.reshape((n_voxels,) + vals.shape[1:])
