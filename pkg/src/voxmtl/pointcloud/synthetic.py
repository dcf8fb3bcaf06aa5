"""Seeded synthetic driving scenes with exact labels for all six tasks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import bev_corners, points_in_box, to_box_frame
from .frame import PointCloudFrame


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    x_range: tuple[float, float] = (0.5, 38.0)
    y_range: tuple[float, float] = (-18.0, 18.0)
    n_vehicles: int = 4
    n_pedestrians: int = 2
    n_buildings: int = 2
    ground_density: float = 3.0  # points per m^2
    object_density: float = 30.0  # points per m^2 of visible surface
    building_density: float = 4.0
    ground_amplitude: float = 0.3  # meters, sum of sinusoid amplitudes
    road_half_width: float = 6.0
    vehicle_aligned_fraction: float = 0.7
    max_attempts: int = 200

    def __post_init__(self):
        for name in ("n_vehicles", "n_pedestrians", "n_buildings"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("empty scene extent")


VEHICLE_SIZE = ((3.8, 5.0), (1.7, 2.1), (1.4, 1.8))
PEDESTRIAN_SIZE = ((0.5, 0.9), (0.5, 0.9), (1.6, 1.9))


@dataclass(frozen=True)
class GroundSurface:
    """z = sum_k a_k sin(fx_k x + fy_k y + phase_k)."""

    amps: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    phase: np.ndarray

    def __call__(self, x, y):
        x = np.asarray(x, dtype=np.float64)[..., None]
        y = np.asarray(y, dtype=np.float64)[..., None]
        return np.sum(self.amps * np.sin(self.fx * x + self.fy * y + self.phase), axis=-1)


def _ground(rng, amplitude: float) -> GroundSurface:
    k = 3
    w = rng.uniform(0.5, 1.0, k)
    amps = amplitude * w / w.sum()
    wavelength = rng.uniform(25.0, 70.0, k)
    direction = rng.uniform(0, 2 * np.pi, k)
    f = 2 * np.pi / wavelength
    return GroundSurface(amps, f * np.cos(direction), f * np.sin(direction), rng.uniform(0, 2 * np.pi, k))


def _in_convex(poly: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Membership in a CCW convex polygon (boundary inclusive)."""
    inside = np.ones(len(xy), dtype=bool)
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (xy[:, 1] - a[1]) - (b[1] - a[1]) * (xy[:, 0] - a[0])
        inside &= cross >= 0
    return inside


def _footprint_overlap(a, b, margin: float) -> bool:
    """Conservative BEV overlap test using separating axes on inflated boxes."""
    ca = bev_corners(np.r_[a[:3], a[3] + 2 * margin, a[4] + 2 * margin, a[5], a[6]])
    cb = bev_corners(np.r_[b[:3], b[3] + 2 * margin, b[4] + 2 * margin, b[5], b[6]])
    for poly in (ca, cb):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            n = np.array([-e[1], e[0]])
            pa, pb = ca @ n, cb @ n
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _surface_points(rng, box, density: float, origin=np.zeros(2), with_top=True, skirt=0.05):
    """Sample the sensor-facing side faces (and top) of a box."""
    cx, cy, cz, l, w, h, th = box
    c, s = math.cos(th), math.sin(th)
    inset = 1e-3
    faces = []
    # (normal in local frame, local center, extent along tangent, tangent axis)
    for nx, ny, half_t, span in ((1, 0, w / 2, l / 2), (-1, 0, w / 2, l / 2), (0, 1, l / 2, w / 2), (0, -1, l / 2, w / 2)):
        n_world = np.array([c * nx - s * ny, s * nx + c * ny])
        center = np.array([cx, cy]) + n_world * span
        if np.dot(n_world, center - origin) >= 0:
            continue
        faces.append((nx, ny, half_t, span))
    out = []
    z_lo = cz - h / 2 + skirt
    z_hi = cz + h / 2 - inset
    for nx, ny, half_t, span in faces:
        area = 2 * half_t * (z_hi - z_lo)
        n = rng.poisson(max(area * density, 1.0))
        t = rng.uniform(-half_t + inset, half_t - inset, n)
        z = rng.uniform(z_lo, z_hi, n)
        d = span - inset
        if nx:
            lx, ly = np.full(n, nx * d), t
        else:
            lx, ly = t, np.full(n, ny * d)
        out.append(np.stack([lx, ly, z], axis=1))
    if with_top:
        n = rng.poisson(max(l * w * density, 1.0))
        lx = rng.uniform(-l / 2 + inset, l / 2 - inset, n)
        ly = rng.uniform(-w / 2 + inset, w / 2 - inset, n)
        out.append(np.stack([lx, ly, np.full(n, z_hi)], axis=1))
    if not out:
        return np.zeros((0, 3))
    loc = np.concatenate(out)
    wx = cx + c * loc[:, 0] - s * loc[:, 1]
    wy = cy + s * loc[:, 0] + c * loc[:, 1]
    return np.stack([wx, wy, loc[:, 2]], axis=1)


def _sample_box(rng, cfg: SceneConfig, kind: str, road, ground: GroundSurface):
    (x0, x1), (y0, y1) = cfg.x_range, cfg.y_range
    road_y0, road_slope, hw = road
    if kind == "building":
        l, w, h = rng.uniform(6, 14), rng.uniform(4, 9), rng.uniform(2.8, 3.6)
        x = rng.uniform(x0 + l / 2, x1 - l / 2)
        side = rng.choice([-1.0, 1.0])
        off = hw + 2.0 + rng.uniform(0, 3) + max(l, w) / 2
        y = road_y0 + road_slope * x + side * off
        th = math.atan(road_slope) + rng.uniform(-0.15, 0.15)
    else:
        sizes = VEHICLE_SIZE if kind == "vehicle" else PEDESTRIAN_SIZE
        l, w, h = (rng.uniform(*r) for r in sizes)
        x = rng.uniform(x0 + 3.0, x1 - 3.0)
        if kind == "vehicle":
            y = road_y0 + road_slope * x + rng.uniform(-hw + 1.5, hw - 1.5)
            if rng.random() < cfg.vehicle_aligned_fraction:
                th = math.atan(road_slope) + rng.choice([0.0, np.pi]) + rng.normal(0, 0.1)
            else:
                th = rng.uniform(-np.pi, np.pi)
        else:
            side = rng.choice([-1.0, 1.0])
            y = road_y0 + road_slope * x + side * (hw + rng.uniform(-1.0, 2.0))
            th = rng.uniform(-np.pi, np.pi)
    foot = bev_corners(np.array([x, y, 0, l, w, h, th]))
    z_bottom = float(max(ground(foot[:, 0], foot[:, 1]).max(), ground(x, y)))
    box = np.array([x, y, z_bottom + h / 2, l, w, h, th])
    return box.astype(np.float32).astype(np.float64)


def generate_synthetic_scene(seed: int, params: SceneConfig | None = None) -> PointCloudFrame:
    """Deterministic scene: undulating ground, a road band, vehicles, pedestrians, buildings."""
    cfg = params or SceneConfig()
    rng = np.random.default_rng(seed)
    ground = _ground(rng, cfg.ground_amplitude)
    (x0, x1), (y0, y1) = cfg.x_range, cfg.y_range
    road = (rng.uniform(-3, 3), rng.uniform(-0.08, 0.08), cfg.road_half_width)
    road_y0, road_slope, hw = road

    placed: list[np.ndarray] = []
    kinds: list[str] = []
    requests = ["building"] * cfg.n_buildings + ["vehicle"] * cfg.n_vehicles + ["pedestrian"] * cfg.n_pedestrians
    for kind in requests:
        for _ in range(cfg.max_attempts):
            box = _sample_box(rng, cfg, kind, road, ground)
            cx, cy = box[:2]
            if not (x0 <= cx <= x1 and y0 <= cy <= y1):
                continue
            if any(_footprint_overlap(box, other, 0.5) for other in placed):
                continue
            placed.append(box)
            kinds.append(kind)
            break
        else:
            raise SceneGenerationError(f"could not place a non-overlapping {kind} after {cfg.max_attempts} attempts")

    # ground points, occluded under object and building footprints
    area = (x1 - x0) * (y1 - y0)
    n_ground = rng.poisson(area * cfg.ground_density)
    gx = rng.uniform(x0, x1, n_ground)
    gy = rng.uniform(y0, y1, n_ground)
    keep = np.ones(n_ground, dtype=bool)
    for box in placed:
        inflated = np.r_[box[:3], box[3] + 0.4, box[4] + 0.4, box[5], box[6]]
        keep &= ~_in_convex(bev_corners(inflated), np.stack([gx, gy], 1))
    gx, gy = gx[keep], gy[keep]
    gz = ground(gx, gy)
    ground_pts = np.stack([gx, gy, gz], axis=1)

    surface_pts = []
    for box, kind in zip(placed, kinds):
        if kind == "building":
            surface_pts.append(_surface_points(rng, box, cfg.building_density, with_top=False, skirt=0.25))
        else:
            surface_pts.append(_surface_points(rng, box, cfg.object_density))
    other = np.concatenate(surface_pts) if surface_pts else np.zeros((0, 3))

    points = np.concatenate([ground_pts, other]).astype(np.float32)
    n = len(points)
    is_ground = np.zeros(n, dtype=bool)
    is_ground[: len(ground_pts)] = True
    p64 = points.astype(np.float64)

    obj_boxes = [b for b, k in zip(placed, kinds) if k != "building"]
    obj_classes = [0 if k == "vehicle" else 1 for k in kinds if k != "building"]
    boxes = np.array(obj_boxes, dtype=np.float32).reshape(-1, 7)

    fg = np.zeros(n, dtype=np.uint8)
    ip = np.zeros((n, 3), dtype=np.float64)
    for b in boxes.astype(np.float64):
        inside = points_in_box(p64, b) & (fg == 0)
        fg[inside] = 1
        ip[inside] = normalized_part_location(p64[inside], b)

    gh = ground(p64[:, 0], p64[:, 1])
    road_poly = np.array(
        [
            [x0, road_y0 + road_slope * x0 - hw],
            [x1, road_y0 + road_slope * x1 - hw],
            [x1, road_y0 + road_slope * x1 + hw],
            [x0, road_y0 + road_slope * x0 + hw],
        ]
    )
    da = (is_ground & (fg == 0) & _in_convex(road_poly, p64[:, :2])).astype(np.uint8)
    gc = is_ground.astype(np.uint8)
    pose = np.array([0.0, 0.0, ground(0.0, 0.0), 0.0, 0.0, 0.0])
    return PointCloudFrame(
        points=points,
        fg=fg,
        da=da,
        gc=gc,
        gh=gh,
        ip=ip,
        boxes=boxes,
        box_classes=np.array(obj_classes, dtype=np.int32),
        ego_pose=pose,
    )


def frame_seed(seed: int, index: int) -> int:
    """Independent per-frame seed derived from a run seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def synthetic_frames(n: int, seed: int = 0, params: SceneConfig | None = None) -> list[PointCloudFrame]:
    return [generate_synthetic_scene(frame_seed(seed, i), params) for i in range(n)]


def normalized_part_location(points, box) -> np.ndarray:
    """Canonical-frame offset divided by box size, shifted into [0, 1]^3."""
    b = np.asarray(box, dtype=np.float64)
    local = to_box_frame(points, b) / b[3:6] + 0.5
    return np.clip(local, 0.0, 1.0)


def downsample_points(frame: PointCloudFrame, factor: int, seed: int = 0) -> PointCloudFrame:
    """Keep every ``factor``-th point of a seeded permutation (original order preserved)."""
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return frame
    perm = np.random.default_rng(seed).permutation(len(frame))
    keep = np.sort(perm[::factor])
    return frame.subset(keep)


def plane_ground_height(frame: PointCloudFrame) -> np.ndarray:
    """Height of the flat plane through the ego pose, evaluated at every point."""
    if frame.ego_pose is None:
        raise ValueError("plane ground height needs an ego pose")
    px, py, pz, roll, pitch, yaw = (float(v) for v in frame.ego_pose)
    cr, sr, cp, sp, cy, sy = math.cos(roll), math.sin(roll), math.cos(pitch), math.sin(pitch), math.cos(yaw), math.sin(yaw)
    # third column of Rz(yaw) Ry(pitch) Rx(roll)
    nx = cy * sp * cr + sy * sr
    ny = sy * sp * cr - cy * sr
    nz = cp * cr
    p = frame.points.astype(np.float64)
    return pz - (nx * (p[:, 0] - px) + ny * (p[:, 1] - py)) / nz
