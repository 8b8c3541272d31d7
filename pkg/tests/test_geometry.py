import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_box
from oracles import lattice_iou, monte_carlo_iou, reference_nms
from perceval.core import Box3D, Forecast, FrameKey, FrameSet, Trajectory
from perceval.geometry import (
    TtaTransform,
    apply_tta,
    bev_corners,
    bev_iou,
    center_distance,
    default_tta_transforms,
    invert_tta,
    nms,
    polygon_area,
    yaw_error,
)

# exact octagon of two unit squares at 45 degrees: area 2(sqrt2 - 1), IoU 1/sqrt2
IOU_45 = 0.7071067811865476


def square(x=0.0, y=0.0, side=1.0, yaw=0.0, score=1.0, category="REGULAR_VEHICLE"):
    return Box3D((x, y, 0.0), (side, side, 1.0), yaw, score=score, category=category)


def test_corners_are_ccw_with_correct_area():
    b = Box3D((1, 2, 0), (4, 2, 1), 0.7)
    assert polygon_area(bev_corners(b)) == pytest.approx(8.0)


def test_identity_iou():
    b = Box3D((1, 2, 0), (4, 2, 1), 0.7)
    assert bev_iou(b, b) == 1.0


def test_disjoint_iou():
    assert bev_iou(square(side=2), square(4, 0, side=2)) == 0.0


def test_shared_edge_counts_as_zero():
    assert bev_iou(square(side=2), square(2, 0, side=2)) == 0.0


def test_rotated_unit_square_matches_closed_form():
    assert bev_iou(square(), square(yaw=math.pi / 4)) == pytest.approx(IOU_45, abs=1e-12)


def test_rotated_unit_square_matches_monte_carlo():
    est = monte_carlo_iou(square(), square(yaw=math.pi / 4), 10_000_000, np.random.default_rng(0))
    assert abs(est - bev_iou(square(), square(yaw=math.pi / 4))) < 1e-3


def test_half_overlap():
    # shifted by half a side: inter 0.5, union 1.5
    assert bev_iou(square(), square(0.5, 0)) == pytest.approx(1 / 3)


def test_iou_against_lattice_oracle(rng):
    for _ in range(50):
        a, b = random_box(rng, spread=1.5), random_box(rng, spread=1.5)
        assert abs(bev_iou(a, b) - lattice_iou(a, b, 22, rng)) < 2e-3


box_strategy = st.builds(
    lambda x, y, l, w, yaw: Box3D((x, y, 0), (l, w, 1), yaw),
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.floats(0.2, 5),
    st.floats(0.2, 5),
    st.floats(-math.pi, math.pi),
)


@settings(max_examples=200, deadline=None)
@given(box_strategy, box_strategy, st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_iou_symmetric_bounded_and_rigid_invariant(a, b, theta, tx, ty):
    iou = bev_iou(a, b)
    assert 0.0 <= iou <= 1.0
    assert iou == pytest.approx(bev_iou(b, a), abs=1e-9)

    c, s = math.cos(theta), math.sin(theta)

    def move(box):
        x, y = box.center[0], box.center[1]
        return box.replace(center=(c * x - s * y + tx, s * x + c * y + ty, 0.0), yaw=box.yaw + theta)

    assert bev_iou(move(a), move(b)) == pytest.approx(iou, abs=1e-9)


def test_center_distance():
    a = Box3D((0, 0, 0), (1, 1, 1), 0)
    b = Box3D((3, 4, 7), (1, 1, 1), 0)
    assert center_distance(a, a) == 0.0
    assert center_distance(a, b) == 5.0
    assert center_distance(b, a) == 5.0
    shift = lambda box: box.replace(center=(box.center[0] + 10, box.center[1] + 10, box.center[2]))
    assert center_distance(shift(a), shift(b)) == 5.0


@pytest.mark.parametrize(
    "a, b, expected",
    [(0.0, 0.0, 0.0), (math.pi - 0.01, -math.pi + 0.01, 0.02), (0.0, math.pi / 2, math.pi / 2), (0.0, math.pi, math.pi)],
)
def test_yaw_error(a, b, expected):
    assert yaw_error(a, b) == pytest.approx(expected, abs=1e-12)


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_yaw_error_range(a, b):
    err = yaw_error(a, b)
    assert 0.0 <= err <= math.pi
    assert err == pytest.approx(yaw_error(b, a), abs=1e-12)


# ---------------------------------------------------------------- NMS


def test_nms_suppresses_duplicate():
    a, b = square(score=0.9), square(score=0.8)
    assert nms([b, a], 0.5) == [a]


def test_nms_keeps_disjoint():
    boxes = [square(0, 0, score=0.2), square(5, 0, score=0.9), square(10, 0, score=0.5)]
    assert nms(boxes, 0.5) == sorted(boxes, key=lambda b: -b.score)


def test_nms_is_per_category():
    a = square(score=0.9)
    b = square(score=0.8, category="PEDESTRIAN")
    assert nms([a, b], 0.1) == [a, b]


def test_nms_stable_ties():
    a = square(0, 0, score=0.5)
    b = square(0.1, 0, score=0.5)
    assert nms([a, b], 0.5) == [a]
    assert nms([b, a], 0.5) == [b]


def test_nms_matches_reference(rng):
    for trial in range(200):
        n = 5 if trial < 100 else int(rng.integers(1, 25))
        cats = ["REGULAR_VEHICLE", "PEDESTRIAN"]
        boxes = [random_box(rng, category=cats[int(rng.integers(2))], spread=2.0) for _ in range(n)]
        thr = 0.3 if trial < 100 else float(rng.uniform(0, 1))
        assert nms(boxes, thr) == reference_nms(boxes, thr, bev_iou)


def test_nms_properties(rng):
    for _ in range(50):
        boxes = [random_box(rng, spread=2.0) for _ in range(12)]
        thr = float(rng.uniform(0.1, 0.7))
        kept = nms(boxes, thr)
        assert all(k in boxes for k in kept)
        assert nms(kept, thr) == kept
        assert [b.score for b in kept] == sorted((b.score for b in kept), reverse=True)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert bev_iou(a, b) <= thr
        for b in boxes:
            if b not in kept:
                assert any(k.score >= b.score and bev_iou(k, b) > thr for k in kept)


def test_nms_rejects_bad_threshold():
    with pytest.raises(ValueError):
        nms([], 1.5)


# ---------------------------------------------------------------- TTA


def _fs(boxes):
    return FrameSet("detection", {FrameKey("log", 0): boxes})


def test_twelve_default_transforms():
    ts = default_tta_transforms()
    assert len(ts) == 12 and len(set(ts)) == 12
    assert {t.scale for t in ts} == {0.95, 1.0, 1.05}


def test_identity_transform():
    fs = _fs([Box3D((2, 3, 1), (4, 2, 1.5), 0.4, (1, 2), 0.9)])
    assert apply_tta(fs, TtaTransform()) == fs


def test_flip_xz_is_an_involution():
    fs = _fs([Box3D((2, 3, 1), (4, 2, 1.5), 0.4, (1, 2), 0.9)])
    t = TtaTransform(flip_xz=True)
    assert apply_tta(apply_tta(fs, t), t) == fs


def test_scale_example():
    fs = _fs([Box3D((2, 3, 1), (4, 2, 1.5), 0.4)])
    out = apply_tta(fs, TtaTransform(0.95))[FrameKey("log", 0)][0]
    assert out.center == pytest.approx((1.9, 2.85, 0.95), abs=1e-12)
    assert out.size == pytest.approx((3.8, 1.9, 1.425), abs=1e-12)


def test_flip_semantics():
    b = Box3D((2, 3, 1), (4, 2, 1.5), 0.4, (1, 2))
    xz = apply_tta(_fs([b]), TtaTransform(flip_xz=True))[FrameKey("log", 0)][0]
    assert xz.center == (2, -3, 1) and xz.velocity == (1, -2) and xz.yaw == pytest.approx(-0.4)
    yz = apply_tta(_fs([b]), TtaTransform(flip_yz=True))[FrameKey("log", 0)][0]
    assert yz.center == (-2, 3, 1) and yz.velocity == (-1, 2) and yz.yaw == pytest.approx(math.pi - 0.4)


def test_flip_preserves_iou():
    a, b = Box3D((0, 0, 0), (4, 2, 1), 0.3), Box3D((1, 0.5, 0), (3, 2, 1), -0.2)
    for t in default_tta_transforms():
        fa, fb = apply_tta(_fs([a, b]), t)[FrameKey("log", 0)]
        assert bev_iou(fa, fb) == pytest.approx(bev_iou(a, b), abs=1e-9)


def test_forecasts_transform_and_invert():
    fc = Forecast(Box3D((1, 2, 0), (4, 2, 1), 0.1), [(Trajectory([(1.5, 2.5), (2, 3)]), 1.0)])
    fs = FrameSet("forecast", {FrameKey("log", 0): [fc]})
    t = TtaTransform(1.05, True, True)
    moved = apply_tta(fs, t)[FrameKey("log", 0)][0]
    assert moved.modes[0][0].waypoints[1] == pytest.approx((-2.1, -3.15))
    back = invert_tta(apply_tta(fs, t), t)[FrameKey("log", 0)][0]
    assert back.modes[0][0].waypoints[1] == pytest.approx((2, 3), abs=1e-12)


@pytest.mark.parametrize("scale", [0.0, -1.0, math.inf])
def test_scale_must_be_positive(scale):
    with pytest.raises(ValueError):
        TtaTransform(scale)
