import numpy as np
import pytest

from voxmtl.geometry import points_in_box
from voxmtl.pointcloud import (
    PointCloudFrame,
    SceneConfig,
    VoxelGridSpec,
    generate_synthetic_scene,
    read_frame,
    voxelize,
    write_frame,
)
from voxmtl.pointcloud.fileio import FrameFormatError, frame_from_bytes, frame_to_bytes
from voxmtl.pointcloud.synthetic import downsample_points, plane_ground_height
from voxmtl.pointcloud.voxel import gather_mean, scatter_to_points

SMALL = SceneConfig(x_range=(0.5, 24), y_range=(-16, 16), n_vehicles=2, n_pedestrians=1, n_buildings=1)


@pytest.fixture(scope="module")
def frame():
    return generate_synthetic_scene(3, SMALL)


def test_grid_shape_rounds_exact_multiples():
    assert VoxelGridSpec().grid_shape == (704, 800, 55)
    assert VoxelGridSpec((0, 0, 0), (1.05, 1, 1), 0.1).grid_shape == (11, 10, 10)
    with pytest.raises(ValueError):
        VoxelGridSpec((0, 0, 0), (0, 1, 1), 0.1)


def test_voxelize_against_dictionary_grouping():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 4.5, (500, 3))
    spec = VoxelGridSpec((0, 0, 0), (4, 4, 4), 0.5)
    vox = voxelize(pts, spec)
    groups = {}
    for i, p in enumerate(pts.astype(np.float32).astype(np.float64)):
        if np.all((p >= 0) & (p < 4)):
            groups.setdefault(tuple(np.floor(p / 0.5).astype(int)), []).append(i)
    assert len(vox) == len(groups)
    assert [tuple(c) for c in vox.coords] == sorted(groups)
    for v, c in enumerate(vox.coords):
        members = groups[tuple(c)]
        assert vox.counts[v] == len(members)
        assert sorted(np.nonzero(vox.point_to_voxel == v)[0]) == members
    assert np.all(vox.point_to_voxel[[i for i in range(500) if not any(i in m for m in groups.values())]] == -1)


def test_scatter_gather_inverse():
    p2v = np.array([0, 1, 1, -1, 2])
    vals, valid = scatter_to_points(np.array([1.0, 2.0, 3.0]), p2v)
    assert vals.tolist() == [1, 2, 2, 0, 3] and valid.tolist() == [True, True, True, False, True]
    assert gather_mean(vals, p2v, 3).tolist() == [1, 2, 3]


def test_synthetic_scene_is_deterministic(frame):
    again = generate_synthetic_scene(3, SMALL)
    assert frame.equals(again)
    assert not frame.equals(generate_synthetic_scene(4, SMALL))


def test_synthetic_labels_are_consistent(frame):
    assert frame.has_labels
    p = frame.points.astype(np.float64)
    inside = np.zeros(len(frame), bool)
    for b in frame.boxes.astype(np.float64):
        inside |= points_in_box(p, b)
    assert np.array_equal(inside, frame.fg == 1)
    ipf = frame.ip[frame.fg == 1]
    assert ipf.min() >= 0 and ipf.max() <= 1
    # drivable area is a subset of ground
    assert np.all(frame.gc[frame.da == 1] == 1)
    assert np.all(frame.fg[frame.gc == 1] == 0)
    ground = frame.gc == 1
    np.testing.assert_allclose(frame.gh[ground], frame.points[ground, 2], atol=1e-5)


def test_frame_rejects_mismatched_labels():
    with pytest.raises(ValueError):
        PointCloudFrame(points=np.zeros((3, 3)), fg=np.zeros(2))
    with pytest.raises(ValueError):
        PointCloudFrame(points=np.zeros((1, 3)), fg=[1], ip=[[1.5, 0, 0]])


def test_binary_round_trip(frame, tmp_path):
    path = tmp_path / "f.vxf"
    write_frame(frame, path)
    assert read_frame(path).equals(frame)
    bare = PointCloudFrame(points=frame.points[:10])
    assert frame_from_bytes(frame_to_bytes(bare)).equals(bare)


def test_binary_reader_reports_offsets(frame):
    buf = frame_to_bytes(frame)
    with pytest.raises(FrameFormatError, match="magic"):
        frame_from_bytes(b"XXXX" + buf[4:])
    with pytest.raises(FrameFormatError) as err:
        frame_from_bytes(buf[:-3])
    assert err.value.offset > 0
    with pytest.raises(FrameFormatError, match="trailing"):
        frame_from_bytes(buf + b"\0")


def test_downsample_and_plane_ground(frame):
    assert downsample_points(frame, 1) is frame
    half = downsample_points(frame, 2, seed=1)
    assert len(half) == (len(frame) + 1) // 2
    assert np.all(np.isin(half.points[:, 0], frame.points[:, 0]))
    with pytest.raises(ValueError):
        downsample_points(frame, 0)
    h = plane_ground_height(frame)
    # flat pose: plane height is constant
    np.testing.assert_allclose(h, frame.ego_pose[2], atol=1e-6)
