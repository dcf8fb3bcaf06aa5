from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

CLASS_NAMES = ("VEHICLE", "PEDESTRIAN")


def _frozen(a, dtype, shape_tail=()):
    if a is None:
        return None
    arr = np.array(a, dtype=dtype, copy=True)
    arr = arr.reshape((-1,) + tuple(shape_tail))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloudFrame:
    """Lidar points with optional per-point labels for the five point-wise tasks.

    ``ip`` rows are only meaningful where ``fg == 1`` (zeros elsewhere).
    ``boxes`` is (M, 7) float32 in Lidar coordinates, ``box_classes`` indexes
    :data:`CLASS_NAMES`. ``ego_pose`` is (x, y, z, roll, pitch, yaw) of the ego
    ground contact point.
    """

    points: np.ndarray
    fg: np.ndarray | None = None
    da: np.ndarray | None = None
    gc: np.ndarray | None = None
    gh: np.ndarray | None = None
    ip: np.ndarray | None = None
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 7), np.float32))
    box_classes: np.ndarray = field(default_factory=lambda: np.zeros((0,), np.int32))
    ego_pose: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "points", _frozen(self.points, np.float32, (3,)))
        n = len(self.points)
        for name in ("fg", "da", "gc"):
            set_(self, name, _frozen(getattr(self, name), np.uint8))
        set_(self, "gh", _frozen(self.gh, np.float32))
        set_(self, "ip", _frozen(self.ip, np.float32, (3,)))
        set_(self, "boxes", _frozen(self.boxes, np.float32, (7,)))
        set_(self, "box_classes", _frozen(self.box_classes, np.int32))
        if self.ego_pose is not None:
            set_(self, "ego_pose", _frozen(self.ego_pose, np.float32).reshape(6))
        for name in ("fg", "da", "gc", "gh", "ip"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"label '{name}' has {len(arr)} rows for {n} points")
        if len(self.boxes) != len(self.box_classes):
            raise ValueError("boxes and box_classes differ in length")
        if self.ip is not None and self.fg is not None:
            ipf = self.ip[self.fg == 1]
            if ipf.size and (ipf.min() < 0 or ipf.max() > 1):
                raise ValueError("intra-object part locations must lie in [0, 1]^3")

    def __len__(self):
        return len(self.points)

    @property
    def has_labels(self) -> bool:
        return all(getattr(self, k) is not None for k in ("fg", "da", "gc", "gh", "ip"))

    def subset(self, index) -> "PointCloudFrame":
        """Frame restricted to the given point indices (boxes and pose kept)."""
        idx = np.asarray(index)

        def take(a):
            return None if a is None else a[idx]

        return replace(
            self,
            points=self.points[idx],
            fg=take(self.fg),
            da=take(self.da),
            gc=take(self.gc),
            gh=take(self.gh),
            ip=take(self.ip),
        )

    def equals(self, other: "PointCloudFrame") -> bool:
        for name in ("points", "fg", "da", "gc", "gh", "ip", "boxes", "box_classes", "ego_pose"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and (a.shape != b.shape or not np.array_equal(a, b)):
                return False
        return True
