"""Merging of augmented inference passes and multi-model ensembling.

Three operations live here:

* :func:`tta_merge` undoes each test-time augmentation and suppresses the
  duplicates with NMS.
* :func:`wbf` fuses detections from several models with Weighted Box Fusion
  adapted to rotated boxes.
* :func:`ensemble_forecasts` runs the same box clustering and then clusters
  the pooled trajectories of every box cluster by mean L2 distance, with a
  merge radius that grows with the speed of the fused box.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ._parallel import ordered_map
from .core import Box3D, Forecast, FrameKey, FrameSet, Trajectory, entry_box
from .geometry import TtaTransform, bev_iou, invert_tta, nms

SCORE_FUSIONS = ("mean", "weighted_mean", "max")


@dataclass(frozen=True)
class EnsembleConfig:
    iou_cluster_threshold: float = 0.5
    traj_base_threshold: float = 1.0  # meters
    traj_speed_coeff: float = 0.5  # seconds
    min_cluster_votes: int = 1
    score_fusion: str = "mean"

    def __post_init__(self):
        if not 0.0 < self.iou_cluster_threshold <= 1.0:
            raise ValueError("iou_cluster_threshold must lie in (0, 1]")
        if self.traj_base_threshold <= 0 or self.traj_speed_coeff < 0:
            raise ValueError("trajectory thresholds must be positive")
        if int(self.min_cluster_votes) < 1:
            raise ValueError("min_cluster_votes must be at least 1")
        if self.score_fusion not in SCORE_FUSIONS:
            raise ValueError(f"score_fusion must be one of {SCORE_FUSIONS}")

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown ensemble config field(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ModelOutput:
    model_id: str
    frames: FrameSet
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"model {self.model_id!r}: weight must be positive")


def trajectory_threshold(speed: float, cfg: EnsembleConfig) -> float:
    """Merge radius (m) for trajectories of an instance moving at ``speed`` m/s."""
    return cfg.traj_base_threshold + cfg.traj_speed_coeff * speed


def mean_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Mean pointwise distance between two (N, 2) waypoint arrays."""
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def _check_frame_keys(framesets: Sequence[FrameSet]) -> list[FrameKey]:
    reference = list(framesets[0].keys())
    ref_set = set(reference)
    problems = []
    for i, fs in enumerate(framesets[1:], start=1):
        keys = set(fs.keys())
        missing = sorted(ref_set - keys)
        extra = sorted(keys - ref_set)
        if missing:
            problems.append(f"input {i} is missing {', '.join(map(str, missing))}")
        if extra:
            problems.append(f"input {i} has extra {', '.join(map(str, extra))}")
    if problems:
        raise ValueError("mismatched frame keys: " + "; ".join(problems))
    return reference


# --------------------------------------------------------------------------
# TTA merge
# --------------------------------------------------------------------------


def tta_merge(
    outputs: Sequence[tuple[TtaTransform, FrameSet]], iou_threshold: float = 0.5
) -> FrameSet:
    """Invert every augmentation, pool the boxes per frame and run NMS."""
    if not outputs:
        raise ValueError("tta_merge needs at least one input")
    keys = _check_frame_keys([fs for _, fs in outputs])
    restored = [invert_tta(fs, t) for t, fs in outputs]
    frames = {}
    for key in keys:
        pooled = [entry_box(e) for fs in restored for e in fs[key]]
        frames[key] = nms(pooled, iou_threshold)
    return FrameSet("detection", frames)


# --------------------------------------------------------------------------
# weighted box fusion
# --------------------------------------------------------------------------


@dataclass
class _Member:
    box: Box3D
    model_weight: float
    entry: object = None


@dataclass
class _Cluster:
    members: list[_Member] = field(default_factory=list)
    fused: Box3D | None = None


def _weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return (values * weights[:, None]).sum(axis=0) / weights.sum()


def _fuse_geometry(members: Sequence[_Member]) -> Box3D:
    if len(members) == 1:
        return members[0].box
    boxes = [m.box for m in members]
    w = np.array([b.score * m.model_weight for b, m in zip(boxes, members)])
    if w.sum() <= 0:
        w = np.array([m.model_weight for m in members])
    center = _weighted_mean(np.array([b.center for b in boxes]), w)
    size = _weighted_mean(np.array([b.size for b in boxes]), w)
    velocity = _weighted_mean(np.array([b.velocity for b in boxes]), w)
    yaws = np.array([b.yaw for b in boxes])
    yaw = math.atan2(float(np.dot(w, np.sin(yaws))), float(np.dot(w, np.cos(yaws))))
    return Box3D(
        center=tuple(center),
        size=tuple(size),
        yaw=yaw,
        velocity=tuple(velocity),
        score=boxes[0].score,
        category=boxes[0].category,
    )


def _fused_score(members: Sequence[_Member], cfg: EnsembleConfig, num_models: int) -> float:
    scores = np.array([m.box.score for m in members])
    if cfg.score_fusion == "mean":
        score = float(scores.mean())
    elif cfg.score_fusion == "weighted_mean":
        w = np.array([m.model_weight for m in members])
        score = float(np.dot(scores, w) / w.sum())
    else:
        score = float(scores.max())
    return score * min(1.0, len(members) / num_models)


def _cluster_boxes(members: list[_Member], cfg: EnsembleConfig) -> list[_Cluster]:
    """Greedy first-fit clustering in descending score order, per category."""
    order = sorted(range(len(members)), key=lambda i: -members[i].box.score)
    clusters: dict[str, list[_Cluster]] = {}
    flat: list[_Cluster] = []
    for i in order:
        member = members[i]
        candidates = clusters.setdefault(member.box.category, [])
        for cluster in candidates:
            if bev_iou(cluster.fused, member.box) > cfg.iou_cluster_threshold:
                cluster.members.append(member)
                cluster.fused = _fuse_geometry(cluster.members)
                break
        else:
            cluster = _Cluster([member], member.box)
            candidates.append(cluster)
            flat.append(cluster)
    return flat


def _pool(models: Sequence[ModelOutput], key: FrameKey) -> list[_Member]:
    return [
        _Member(entry_box(entry), model.weight, entry)
        for model in models
        for entry in model.frames[key]
    ]


def _finalize(cluster: _Cluster, cfg: EnsembleConfig, num_models: int) -> Box3D:
    return cluster.fused.replace(score=_fused_score(cluster.members, cfg, num_models))


def _wbf_frame(models, cfg, key) -> list[Box3D]:
    clusters = _cluster_boxes(_pool(models, key), cfg)
    fused = [
        _finalize(c, cfg, len(models))
        for c in clusters
        if len(c.members) >= cfg.min_cluster_votes
    ]
    return sorted(fused, key=lambda b: -b.score)


def wbf(
    models: Sequence[ModelOutput], cfg: EnsembleConfig = EnsembleConfig(), threads: int = 1
) -> FrameSet:
    """Weighted Box Fusion of per-frame detections from several models.

    Fused center, size and velocity are means weighted by score times model
    weight; yaw is the angle of the weighted mean heading vector. The fused
    score follows ``cfg.score_fusion`` and is scaled by
    ``min(1, members / num_models)``.
    """
    if not models:
        raise ValueError("wbf needs at least one model")
    keys = _check_frame_keys([m.frames for m in models])
    results = ordered_map(lambda k: _wbf_frame(models, cfg, k), keys, threads)
    return FrameSet("detection", dict(zip(keys, results)))


# --------------------------------------------------------------------------
# two-step detection + trajectory ensemble
# --------------------------------------------------------------------------


def _cluster_trajectories(
    pooled: list[tuple[np.ndarray, float, float]], radius: float
) -> list[list[int]]:
    """First-fit clustering of (waypoints, mode_score, weight) by mean L2."""
    order = sorted(range(len(pooled)), key=lambda i: -pooled[i][1])
    groups: list[list[int]] = []
    centers: list[np.ndarray] = []
    for i in order:
        pts = pooled[i][0]
        for g, center in enumerate(centers):
            if mean_l2(center, pts) <= radius:
                groups[g].append(i)
                centers[g] = _fuse_waypoints([pooled[j] for j in groups[g]])
                break
        else:
            groups.append([i])
            centers.append(pts)
    return groups


def _fuse_waypoints(items: Sequence[tuple[np.ndarray, float, float]]) -> np.ndarray:
    if len(items) == 1:
        return items[0][0]
    w = np.array([score * weight for _, score, weight in items])
    if w.sum() <= 0:
        w = np.array([weight for _, _, weight in items])
    stacked = np.stack([pts for pts, _, _ in items])
    return np.tensordot(w, stacked, axes=1) / w.sum()


def _forecast_frame(models, cfg, max_modes, key) -> list[Forecast]:
    num_models = len(models)
    out = []
    for cluster in _cluster_boxes(_pool(models, key), cfg):
        if len(cluster.members) < cfg.min_cluster_votes:
            continue
        detection = _finalize(cluster, cfg, num_models)
        pooled = []
        period = None
        for member in cluster.members:
            for traj, mode_score in member.entry.modes:
                period = traj.step_period
                pooled.append((np.array(traj.waypoints), mode_score, member.model_weight))
        radius = trajectory_threshold(detection.speed, cfg)
        groups = _cluster_trajectories(pooled, radius)
        total = sum(score for _, score, _ in pooled)
        modes = []
        for group in groups:
            items = [pooled[i] for i in group]
            group_score = sum(score for _, score, _ in items)
            norm = group_score / total if total > 0 else 1.0 / len(groups)
            pts = _fuse_waypoints(items)
            modes.append((Trajectory([tuple(p) for p in pts.tolist()], period), norm))
        modes.sort(key=lambda m: -m[1])
        out.append(Forecast(detection, modes[:max_modes]))
    out.sort(key=lambda f: -f.detection.score)
    return out


def ensemble_forecasts(
    models: Sequence[ModelOutput], cfg: EnsembleConfig = EnsembleConfig(), threads: int = 1
) -> FrameSet:
    """Two-step ensemble of forecasts: box clustering, then trajectory clustering.

    Raises:
        ValueError: when models disagree on frame keys or forecast horizon.
    """
    if not models:
        raise ValueError("ensemble_forecasts needs at least one model")
    keys = _check_frame_keys([m.frames for m in models])
    horizons, periods, max_modes = set(), set(), 1
    for model in models:
        if model.frames.kind != "forecast":
            raise ValueError(f"model {model.model_id!r} does not contain forecasts")
        for entries in model.frames.frames.values():
            for fc in entries:
                max_modes = max(max_modes, len(fc.modes))
                for traj, _ in fc.modes:
                    horizons.add(traj.horizon)
                    periods.add(traj.step_period)
    if len(horizons) > 1:
        raise ValueError(f"inconsistent forecast horizons across models: {sorted(horizons)}")
    if len(periods) > 1:
        raise ValueError(f"inconsistent step periods across models: {sorted(periods)}")
    results = ordered_map(lambda k: _forecast_frame(models, cfg, max_modes, k), keys, threads)
    return FrameSet("forecast", dict(zip(keys, results)))


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestModel:
    model_id: str
    weight: float
    path: Path


def load_manifest(path: str | os.PathLike) -> tuple[list[ManifestModel], EnsembleConfig]:
    """Read an ensemble manifest; model paths resolve relative to the manifest."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or not isinstance(data.get("models"), list):
        raise ValueError("manifest needs a 'models' list")
    models = []
    for item in data["models"]:
        try:
            model_path = Path(item["path"])
            model_id = str(item["id"])
        except (KeyError, TypeError) as exc:
            raise ValueError("manifest model entries need 'id' and 'path'") from exc
        if not model_path.is_absolute():
            model_path = path.parent / model_path
        models.append(ManifestModel(model_id, float(item.get("weight", 1.0)), model_path))
    cfg = EnsembleConfig.from_dict(data.get("config", {}))
    return models, cfg


def write_manifest(
    path: str | os.PathLike, models: Sequence[ManifestModel], cfg: EnsembleConfig
) -> None:
    path = Path(path)
    data = {
        "models": [
            {"id": m.model_id, "weight": m.weight, "path": os.path.relpath(m.path, path.parent)}
            for m in models
        ],
        "config": cfg.to_dict(),
    }
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
