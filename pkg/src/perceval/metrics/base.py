from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

from ..core import Box3D, FrameKey, FrameSet, entry_box

DEFAULT_ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class MatchConfig:
    """Matching thresholds and normalizers shared by all evaluation tasks."""

    distance_thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    tp_error_threshold: float = 2.0
    hota_alphas: tuple[float, ...] = DEFAULT_ALPHAS
    amota_recall_samples: int = 40
    ate_norm: float = 2.0
    ase_norm: float = 1.0
    aoe_norm: float = math.pi
    hota_similarity: str = "distance"  # or "iou"
    static_speed: float = 0.5  # m/s, mean future speed below which an agent is static
    linear_deviation: float = 1.0  # m, max offset from constant-velocity path

    def __post_init__(self):
        object.__setattr__(self, "distance_thresholds", tuple(map(float, self.distance_thresholds)))
        object.__setattr__(self, "hota_alphas", tuple(map(float, self.hota_alphas)))
        d = self.distance_thresholds
        if not d or any(t <= 0 for t in d) or any(a >= b for a, b in zip(d, d[1:])):
            raise ValueError("distance_thresholds must be positive and ascending")
        a = self.hota_alphas
        if not a or any(not 0 < x <= 1 for x in a) or any(x >= y for x, y in zip(a, a[1:])):
            raise ValueError("hota_alphas must lie in (0, 1] and ascend")
        if self.tp_error_threshold <= 0:
            raise ValueError("tp_error_threshold must be positive")
        if self.amota_recall_samples < 1:
            raise ValueError("amota_recall_samples must be at least 1")
        if min(self.ate_norm, self.ase_norm, self.aoe_norm) <= 0:
            raise ValueError("error normalizers must be positive")
        if self.hota_similarity not in ("distance", "iou"):
            raise ValueError("hota_similarity must be 'distance' or 'iou'")

    @classmethod
    def from_dict(cls, data: dict) -> "MatchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown match config field(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["distance_thresholds"] = list(self.distance_thresholds)
        out["hota_alphas"] = list(self.hota_alphas)
        return out


@dataclass
class MetricReport:
    """Per-category (and per-cohort) values with aggregate means.

    ``per_category`` maps a category name to metric values. Forecasting fills
    ``per_cohort`` as ``{category: {cohort: {metric: value}}}``. ``means``
    holds the leaderboard columns for the task.
    """

    task: str
    per_category: dict[str, dict[str, float | None]] = field(default_factory=dict)
    per_cohort: dict[str, dict[str, dict[str, float | None]]] = field(default_factory=dict)
    means: dict[str, float | None] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def frame_boxes(fs: FrameSet, key: FrameKey, category: str | None = None) -> list[Box3D]:
    entries = fs.frames.get(key, ())
    boxes = [entry_box(e) for e in entries]
    if category is not None:
        boxes = [b for b in boxes if b.category == category]
    return boxes


def gt_categories(fs: FrameSet) -> list[str]:
    """Categories present in ``fs`` in first-seen order."""
    seen: dict[str, None] = {}
    for entries in fs.frames.values():
        for e in entries:
            seen.setdefault(entry_box(e).category, None)
    return list(seen)


def all_keys(*framesets: FrameSet) -> list[FrameKey]:
    """Union of frame keys, ordered by first appearance."""
    seen: dict[FrameKey, None] = {}
    for fs in framesets:
        for key in fs.keys():
            seen.setdefault(key, None)
    return list(seen)


def interpolated_ap(tp_flags: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated area under the precision-recall curve.

    ``tp_flags`` are the match outcomes of predictions in descending score
    order.
    """
    if num_gt == 0 or not tp_flags:
        return 0.0
    tp = 0
    precisions, recalls = [], []
    for i, flag in enumerate(tp_flags, start=1):
        tp += bool(flag)
        precisions.append(tp / i)
        recalls.append(tp / num_gt)
    # precision envelope, right to left
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for p, r in zip(precisions, recalls):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return min(1.0, ap)


def mean_or_none(values) -> float | None:
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(sum(values) / len(values))
