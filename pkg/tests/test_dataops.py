import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceval.core import FrameKey
from perceval.dataops import (
    DatasetIndex,
    VoxelGridConfig,
    cbgs_weights,
    read_index,
    read_points,
    resample,
    voxelize,
    write_points,
)

SMALL = VoxelGridConfig(voxel_size=(1.0, 1.0, 1.0), range_min=(0, 0, 0), range_max=(4, 4, 2), max_points_per_voxel=2)


def naive_voxel(point, cfg):
    """Index of the voxel holding ``point``, or None outside the range."""
    idx = []
    for p, lo, hi, s in zip(point[:3], cfg.range_min, cfg.range_max, cfg.voxel_size):
        if not lo <= p < hi:
            return None
        idx.append(min(int(math.floor((p - lo) / s)), round((hi - lo) / s) - 1))
    return tuple(idx)


def test_default_dims():
    assert VoxelGridConfig().dims == (1440, 1440, 30)


def test_empty_cloud():
    grid = voxelize(np.zeros((0, 4)))
    assert grid.num_voxels == 0
    assert grid.summary()["input"] == 0


def test_half_open_range():
    pts = np.array([[0, 0, 0], [4, 1, 1], [3.999, 3.999, 1.999], [-1e-9, 0, 0]], dtype=float)
    grid = voxelize(pts, SMALL)
    assert grid.out_of_range_dropped == 2
    assert sorted(grid.as_dict()) == [(0, 0, 0), (3, 3, 1)]


def test_capacity_keeps_first_points():
    pts = np.array([[0.1, 0.1, 0.1, i] for i in range(5)])
    grid = voxelize(pts, SMALL)
    assert grid.num_points.tolist() == [2]
    assert grid.voxel_points(0)[:, 3].tolist() == [0, 1]
    assert grid.overflow_dropped == 3
    np.testing.assert_allclose(grid.centroids[0], (0.1, 0.1, 0.1))


def test_matches_naive_binning(rng):
    cfg = VoxelGridConfig(max_points_per_voxel=1000)
    pts = rng.uniform(-60, 60, size=(20_000, 4))
    pts[:, 2] = rng.uniform(-4, 4, size=len(pts))
    grid = voxelize(pts, cfg)
    expected: dict[tuple, list[int]] = {}
    for i, p in enumerate(pts):
        v = naive_voxel(p, cfg)
        if v is not None:
            expected.setdefault(v, []).append(i)
    got = grid.as_dict()
    assert set(got) == set(expected)
    for v, rows in expected.items():
        np.testing.assert_array_equal(got[v], pts[rows])


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(0, 400),
    cap=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
)
def test_conservation(n, cap, seed):
    cfg = VoxelGridConfig(voxel_size=(0.5, 0.5, 0.5), range_min=(-2, -2, -1), range_max=(2, 2, 1), max_points_per_voxel=cap)
    pts = np.random.default_rng(seed).uniform(-2.5, 2.5, size=(n, 3))
    grid = voxelize(pts, cfg)
    s = grid.summary()
    assert s["kept"] + s["overflow"] + s["out_of_range"] == n
    assert np.all(grid.num_points <= cap)
    assert len(set(map(tuple, grid.coords.tolist()))) == grid.num_voxels


def test_config_validation():
    with pytest.raises(ValueError):
        VoxelGridConfig(voxel_size=(0.3, 1, 1), range_min=(0, 0, 0), range_max=(1, 1, 1))
    with pytest.raises(ValueError):
        VoxelGridConfig(voxel_size=(0, 1, 1))
    with pytest.raises(ValueError):
        voxelize(np.array([[np.nan, 0, 0]]))


def test_points_file_round_trip(tmp_path, rng):
    pts = rng.normal(size=(100, 4)).astype(np.float32)
    write_points(tmp_path / "p.bin", pts)
    np.testing.assert_array_equal(read_points(tmp_path / "p.bin"), pts)
    (tmp_path / "p.bin.json").write_text('{"count": 99}')
    with pytest.raises(ValueError, match="count"):
        read_points(tmp_path / "p.bin")


def _index(counts):
    return DatasetIndex(tuple((FrameKey("log", i), c) for i, c in enumerate(counts)))


def test_cbgs_nine_to_one():
    idx = _index([{"A": 1}] * 9 + [{"B": 1}])
    w = cbgs_weights(idx)
    # each frame weighs 1/freq: A frames 10/9, the B frame 10
    np.testing.assert_allclose(w[:9].sum(), w[9])


def test_cbgs_uniform_and_single():
    np.testing.assert_allclose(cbgs_weights(_index([{"A": 2}] * 4)), 0.25)
    np.testing.assert_allclose(cbgs_weights(_index([{"A": 1}])), [1.0])


def test_cbgs_unlabeled_entries_get_min_weight():
    w = cbgs_weights(_index([{"A": 1}, {"A": 1}, {"B": 1}, {}]))
    assert w[3] == pytest.approx(min(w[:3]))


def test_cbgs_errors():
    with pytest.raises(ValueError):
        cbgs_weights(_index([]))
    with pytest.raises(ValueError):
        cbgs_weights(_index([{}, {"A": 0}]))


def test_resample_deterministic_and_proportional():
    idx = _index([{"A": 1}] * 9 + [{"B": 1}])
    w = cbgs_weights(idx)
    a = resample(idx, w, 20_000, seed=3)
    assert a == resample(idx, w, 20_000, seed=3)
    assert a != resample(idx, w, 20_000, seed=4)
    draws = Counter(k.timestamp_ns for k in a)
    assert draws[9] / 20_000 == pytest.approx(0.5, abs=0.02)


def test_read_index_counts_and_boxes(tmp_path):
    p = tmp_path / "idx.jsonl"
    p.write_text(
        '{"log_id": "a", "timestamp_ns": 1, "counts": {"BUS": 2}}\n'
        '{"log_id": "a", "timestamp_ns": 2, "boxes": [{"category": "BUS"}, {"category": "PEDESTRIAN"}]}\n'
    )
    idx = read_index(p)
    assert [dict(c) for _, c in idx.entries] == [{"BUS": 2}, {"BUS": 1, "PEDESTRIAN": 1}]
    p.write_text('{"log_id": "a"}\n')
    with pytest.raises(ValueError, match="line 1"):
        read_index(p)
