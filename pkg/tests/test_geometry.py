import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxmtl.geometry import (
    Box3D,
    InvalidBoxError,
    bev_corners,
    decode_boxes,
    encode_boxes,
    iou_3d,
    iou_matrix,
    nms,
    points_in_box,
    rotated_iou_bev,
    wrap_angle,
    wrap_half_pi,
)

from oracles import monte_carlo_bev_iou


def random_box(rng, spread=2.0):
    return np.array(
        [
            rng.uniform(-spread, spread),
            rng.uniform(-spread, spread),
            rng.uniform(-0.5, 0.5),
            rng.uniform(0.5, 5.0),
            rng.uniform(0.5, 3.0),
            rng.uniform(0.5, 2.0),
            rng.uniform(-math.pi, math.pi),
        ]
    )


def test_iou_closed_forms():
    a = np.array([0, 0, 0, 4, 2, 1.5, 0.3])
    assert rotated_iou_bev(a, a) == pytest.approx(1.0, abs=1e-6)
    far = a.copy()
    far[0] += 10
    assert rotated_iou_bev(a, far) == pytest.approx(0.0, abs=1e-6)
    # unit squares shifted by half a side: overlap 1/2, union 3/2
    s = np.array([0, 0, 0, 1, 1, 1, 0.0])
    t = np.array([0.5, 0, 0, 1, 1, 1, 0.0])
    assert rotated_iou_bev(s, t) == pytest.approx(1 / 3, abs=1e-6)


def test_iou_invariant_to_half_turn():
    a = np.array([1, 2, 0, 4, 2, 1.5, 0.3])
    b = a.copy()
    b[6] += math.pi
    assert rotated_iou_bev(a, b) == pytest.approx(1.0, abs=1e-9)


def test_iou_against_monte_carlo_small_sample():
    rng = np.random.default_rng(5)
    for _ in range(25):
        a, b = random_box(rng), random_box(rng)
        ref = monte_carlo_bev_iou(a, b, n=200_000, rng=rng)
        assert abs(rotated_iou_bev(a, b) - ref) <= 0.01


def test_iou_3d_uses_vertical_overlap():
    a = np.array([0, 0, 0, 2, 2, 2, 0.0])
    b = np.array([0, 0, 1, 2, 2, 2, 0.0])
    # overlap volume 4, union 12
    assert iou_3d(a, b) == pytest.approx(1 / 3)
    b[2] = 5
    assert iou_3d(a, b) == 0.0


def test_iou_matrix_matches_pairwise():
    rng = np.random.default_rng(1)
    A = np.stack([random_box(rng) for _ in range(5)])
    B = np.stack([random_box(rng) for _ in range(4)])
    M = iou_matrix(A, B)
    for i in range(5):
        for j in range(4):
            assert M[i, j] == pytest.approx(rotated_iou_bev(A[i], B[j]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = random_box(rng), random_box(rng)
    ab, ba = rotated_iou_bev(a, b), rotated_iou_bev(b, a)
    assert 0.0 <= ab <= 1.0 + 1e-12
    assert ab == pytest.approx(ba, abs=1e-9)


def test_encode_decode_round_trip():
    rng = np.random.default_rng(2)
    gt = np.stack([random_box(rng, 30) for _ in range(500)])
    anchors = np.stack([random_box(rng, 30) for _ in range(500)])
    back = decode_boxes(encode_boxes(gt, anchors), anchors)
    np.testing.assert_allclose(back[:, :6], gt[:, :6], atol=1e-6)
    # heading is recovered modulo a half turn
    assert np.max(np.abs(wrap_half_pi(back[:, 6] - gt[:, 6]))) <= 1e-6


def test_encode_rejects_degenerate_boxes():
    a = np.array([0, 0, 0, 1, 1, 1, 0.0])
    bad = np.array([0, 0, 0, 0, 1, 1, 0.0])
    with pytest.raises(InvalidBoxError):
        encode_boxes(a, bad)
    with pytest.raises(InvalidBoxError):
        Box3D(0, 0, 0, -1, 1, 1)


def test_angle_wrapping_ranges():
    th = np.linspace(-10, 10, 1001)
    w = wrap_angle(th)
    assert np.all((w > -math.pi) & (w <= math.pi))
    np.testing.assert_allclose(np.sin(w), np.sin(th), atol=1e-12)
    h = wrap_half_pi(th)
    assert np.all((h > -math.pi / 2) & (h <= math.pi / 2))
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)


def test_corners_are_counter_clockwise():
    c = bev_corners(np.array([0, 0, 0, 4, 2, 1, 0.7]))
    x, y = c[:, 0], c[:, 1]
    signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    assert signed == pytest.approx(8.0)


def test_points_in_box_closed_boundary():
    box = np.array([1, 1, 0, 2, 2, 2, math.pi / 2])
    pts = np.array([[1, 1, 0], [2, 2, 1], [2.01, 1, 0], [1, 1, 1.01]])
    assert points_in_box(pts, box).tolist() == [True, True, False, False]


def test_nms_keeps_best_and_respects_classes():
    base = np.array([0, 0, 0, 4, 2, 1.5, 0.0])
    shifted = base + np.array([0.2, 0, 0, 0, 0, 0, 0])
    other = base + np.array([10, 0, 0, 0, 0, 0, 0])
    boxes = np.stack([base, shifted, other, shifted])
    kept = nms(boxes, [0.9, 0.95, 0.5, 0.3], [0, 0, 0, 1], 0.5)
    assert kept == [1, 2, 3]
    # ties resolve toward the lower index
    assert nms(np.stack([base, base]), [0.5, 0.5], [0, 0], 0.5) == [0]
    with pytest.raises(ValueError):
        nms(boxes, [np.nan, 1, 1, 1], [0, 0, 0, 0], 0.5)
