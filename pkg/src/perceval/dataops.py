"""Point-cloud voxelization and class-balanced resampling."""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import FrameKey, FrameSet, entry_box


@dataclass(frozen=True)
class VoxelGridConfig:
    voxel_size: tuple[float, float, float] = (0.075, 0.075, 0.2)
    range_min: tuple[float, float, float] = (-54.0, -54.0, -3.0)
    range_max: tuple[float, float, float] = (54.0, 54.0, 3.0)
    max_points_per_voxel: int = 10

    def __post_init__(self):
        for name in ("voxel_size", "range_min", "range_max"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ValueError(f"{name} needs 3 components")
            object.__setattr__(self, name, value)
        size = np.array(self.voxel_size)
        lo, hi = np.array(self.range_min), np.array(self.range_max)
        if np.any(size <= 0):
            raise ValueError("voxel_size must be positive")
        if np.any(hi <= lo):
            raise ValueError("range_max must exceed range_min on every axis")
        cells = (hi - lo) / size
        if np.any(np.abs(cells - np.round(cells)) > 1e-6):
            raise ValueError("range extent must be a whole number of voxels on every axis")
        if int(self.max_points_per_voxel) < 1:
            raise ValueError("max_points_per_voxel must be at least 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        cells = (np.array(self.range_max) - np.array(self.range_min)) / np.array(self.voxel_size)
        return tuple(int(v) for v in np.round(cells))

    @classmethod
    def from_dict(cls, data: dict) -> "VoxelGridConfig":
        return cls(**data)


@dataclass
class VoxelGrid:
    """Sparse voxel occupancy.

    Voxels are ordered by linear index ``(ix * ny + iy) * nz + iz``.
    ``points[i, :num_points[i]]`` holds the kept points of voxel ``i`` in
    input order; remaining rows are zero padding.
    """

    dims: tuple[int, int, int]
    coords: np.ndarray  # (M, 3) int64 voxel indices
    num_points: np.ndarray  # (M,) kept points per voxel
    points: np.ndarray  # (M, max_points, C)
    centroids: np.ndarray  # (M, 3) mean xyz of kept points
    overflow_dropped: int = 0
    out_of_range_dropped: int = 0
    input_count: int = 0

    @property
    def num_voxels(self) -> int:
        return len(self.coords)

    def voxel_points(self, i: int) -> np.ndarray:
        return self.points[i, : self.num_points[i]]

    def as_dict(self) -> dict[tuple[int, int, int], np.ndarray]:
        return {tuple(int(v) for v in c): self.voxel_points(i) for i, c in enumerate(self.coords)}

    def summary(self) -> dict:
        return {
            "dims": list(self.dims),
            "occupied": self.num_voxels,
            "kept": int(self.num_points.sum()),
            "overflow": int(self.overflow_dropped),
            "out_of_range": int(self.out_of_range_dropped),
            "input": int(self.input_count),
        }


def voxelize(points, cfg: VoxelGridConfig = VoxelGridConfig()) -> VoxelGrid:
    """Bin points into a sparse grid over the half-open range [min, max).

    Args:
        points: ``(N, 3)`` xyz or ``(N, C>3)`` with extra channels such as
            intensity, which are carried through untouched.
        cfg: grid geometry and per-voxel capacity.

    Returns:
        The occupied voxels. The first ``max_points_per_voxel`` points of each
        voxel (in input order) are kept; the rest count as overflow.
    """
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError("points must have shape (N, 3) or (N, C>3)")
    if not np.all(np.isfinite(pts[:, :3])):
        raise ValueError("points must be finite")
    dims = np.array(cfg.dims, dtype=np.int64)
    lo = np.array(cfg.range_min)
    hi = np.array(cfg.range_max)
    size = np.array(cfg.voxel_size)
    cap = int(cfg.max_points_per_voxel)
    n, channels = pts.shape

    xyz = pts[:, :3].astype(np.float64, copy=False)
    inside = np.all((xyz >= lo) & (xyz < hi), axis=1)
    idx_in = np.flatnonzero(inside)
    ijk = np.floor((xyz[idx_in] - lo) / size).astype(np.int64)
    np.clip(ijk, 0, dims - 1, out=ijk)  # guard float rounding at the upper face
    linear = (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]

    order = np.argsort(linear, kind="stable")
    sorted_lin = linear[order]
    if len(sorted_lin):
        starts = np.flatnonzero(np.r_[True, sorted_lin[1:] != sorted_lin[:-1]])
    else:
        starts = np.empty(0, dtype=np.int64)
    counts = np.diff(np.r_[starts, len(sorted_lin)])
    group = np.repeat(np.arange(len(starts)), counts)
    rank = np.arange(len(sorted_lin)) - np.repeat(starts, counts)
    keep = rank < cap

    m = len(starts)
    voxel_points = np.zeros((m, cap, channels), dtype=pts.dtype)
    src = idx_in[order[keep]]
    voxel_points[group[keep], rank[keep]] = pts[src]
    num_points = np.minimum(counts, cap)
    centroids = np.zeros((m, 3))
    np.add.at(centroids, group[keep], xyz[src])
    if m:
        centroids /= num_points[:, None]
    coords = ijk[order[starts]] if m else np.empty((0, 3), dtype=np.int64)

    return VoxelGrid(
        dims=tuple(int(d) for d in dims),
        coords=coords,
        num_points=num_points,
        points=voxel_points,
        centroids=centroids,
        overflow_dropped=int((~keep).sum()),
        out_of_range_dropped=int(n - len(idx_in)),
        input_count=int(n),
    )


def read_points(path: str | os.PathLike) -> np.ndarray:
    """Load ``(N, 4)`` little-endian float32 points and check the sidecar count."""
    path = Path(path)
    data = np.fromfile(path, dtype="<f4")
    if data.size % 4:
        raise ValueError(f"{path}: size is not a multiple of 4 floats")
    pts = data.reshape(-1, 4)
    sidecar = path.with_name(path.name + ".json")
    if sidecar.exists():
        header = json.loads(sidecar.read_text(encoding="utf-8"))
        if int(header.get("count", -1)) != len(pts):
            raise ValueError(f"{path}: header count {header.get('count')} != {len(pts)} points")
    return pts


def write_points(path: str | os.PathLike, points: np.ndarray) -> None:
    path = Path(path)
    pts = np.asarray(points, dtype="<f4").reshape(-1, 4)
    pts.tofile(path)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps({"count": len(pts)}) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# class-balanced sampling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetIndex:
    entries: tuple[tuple[FrameKey, Mapping[str, int]], ...] = field(default_factory=tuple)

    def __post_init__(self):
        normalized = []
        for key, counts in self.entries:
            counts = {str(c): int(n) for c, n in dict(counts).items()}
            if any(n < 0 for n in counts.values()):
                raise ValueError(f"{key}: category counts must be non-negative")
            normalized.append((key, counts))
        object.__setattr__(self, "entries", tuple(normalized))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def keys(self) -> list[FrameKey]:
        return [key for key, _ in self.entries]

    @classmethod
    def from_frameset(cls, fs: FrameSet) -> "DatasetIndex":
        return cls(
            tuple(
                (key, Counter(entry_box(e).category for e in entries))
                for key, entries in fs.items()
            )
        )


def read_index(path: str | os.PathLike) -> DatasetIndex:
    """Read an index from JSON lines.

    Each line is either ``{"log_id", "timestamp_ns", "counts": {cat: n}}`` or a
    frame record with ``boxes``, whose categories are counted.
    """
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                key = FrameKey(str(record["log_id"]), int(record["timestamp_ns"]))
                if "counts" in record:
                    counts = record["counts"]
                else:
                    counts = Counter(b["category"] for b in record["boxes"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"line {lineno}: malformed index record") from exc
            entries.append((key, counts))
    return DatasetIndex(tuple(entries))


def cbgs_weights(idx: DatasetIndex) -> np.ndarray:
    """Per-entry sampling probabilities that balance category appearance.

    Each entry weighs the sum of inverse frequencies of the categories it
    contains. Entries without labels get the smallest positive weight.
    """
    if len(idx) == 0:
        raise ValueError("dataset index is empty")
    present = [{c for c, n in counts.items() if n > 0} for _, counts in idx.entries]
    total = len(present)
    freq = Counter(c for cats in present for c in cats)
    if not freq:
        raise ValueError("dataset index has no labeled instances")
    inv = {c: total / n for c, n in freq.items()}
    weights = np.array([sum(inv[c] for c in sorted(cats)) for cats in present])
    positive = weights[weights > 0]
    weights[weights == 0] = positive.min()
    return weights / weights.sum()


def resample(idx: DatasetIndex, weights: Sequence[float], n: int, seed: int) -> list[FrameKey]:
    """Draw ``n`` frame keys with replacement, proportional to ``weights``.

    Uses numpy's PCG64 generator seeded with ``seed`` and inverse-CDF
    lookup, so the output depends only on the arguments.
    """
    w = np.asarray(weights, dtype=float)
    if len(w) != len(idx):
        raise ValueError("weights and index differ in length")
    if n < 1:
        raise ValueError("n must be at least 1")
    if np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
        raise ValueError("weights must be non-negative with a positive sum")
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    u = np.random.Generator(np.random.PCG64(seed)).random(n)
    picks = np.searchsorted(cdf, u, side="right")
    keys = idx.keys
    return [keys[i] for i in picks]
