"""Distance-matched detection AP, true-positive errors and CDS."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core import DEFAULT_REGISTRY, Box3D, CategoryRegistry, FrameKey, FrameSet
from ..geometry import yaw_error
from .base import MatchConfig, MetricReport, all_keys, frame_boxes, gt_categories, interpolated_ap

logger = logging.getLogger(__name__)


@dataclass
class _Scored:
    key: FrameKey
    index: int
    box: Box3D


def ranked_predictions(pred: FrameSet, keys, category: str) -> list[_Scored]:
    """Predictions of one category in descending score, stable in frame order."""
    items = [
        _Scored(key, i, box)
        for key in keys
        for i, box in enumerate(frame_boxes(pred, key, category))
    ]
    items.sort(key=lambda s: -s.box.score)
    return items


def _distances(gt_boxes: list[Box3D], box: Box3D) -> np.ndarray:
    if not gt_boxes:
        return np.empty(0)
    centers = np.array([b.center[:2] for b in gt_boxes])
    return np.hypot(centers[:, 0] - box.center[0], centers[:, 1] - box.center[1])


def greedy_match(
    ranked: list[_Scored],
    gt_by_frame: dict[FrameKey, list[Box3D]],
    threshold: float,
    distances: list[np.ndarray] | None = None,
) -> list[int | None]:
    """Match each ranked prediction to the nearest unmatched GT within ``threshold``.

    Args:
        distances: optional precomputed ``_distances`` per ranked prediction,
            so several thresholds can share them.

    Returns:
        The matched GT index per prediction (``None`` for a false positive).
        Distance ties go to the lowest GT index.
    """
    if distances is None:
        distances = [_distances(gt_by_frame.get(item.key, []), item.box) for item in ranked]
    taken = {key: np.zeros(len(boxes), dtype=bool) for key, boxes in gt_by_frame.items()}
    matches: list[int | None] = []
    for item, d in zip(ranked, distances):
        if not len(d):
            matches.append(None)
            continue
        candidates = np.where(~taken[item.key] & (d <= threshold), d, np.inf)
        j = int(np.argmin(candidates))
        if math.isinf(candidates[j]):
            matches.append(None)
        else:
            taken[item.key][j] = True
            matches.append(j)
    return matches


def size_similarity(a: Box3D, b: Box3D) -> float:
    """Geometric mean of the per-axis min/max size ratios, in (0, 1]."""
    prod = 1.0
    for x, y in zip(a.size, b.size):
        prod *= min(x, y) / max(x, y)
    return prod ** (1.0 / 3.0)


def _category_metrics(gt, pred, keys, category, cfg) -> dict[str, float]:
    gt_by_frame = {key: frame_boxes(gt, key, category) for key in keys}
    num_gt = sum(len(b) for b in gt_by_frame.values())
    ranked = ranked_predictions(pred, keys, category)
    dists = [_distances(gt_by_frame.get(item.key, []), item.box) for item in ranked]

    aps = []
    for threshold in cfg.distance_thresholds:
        matches = greedy_match(ranked, gt_by_frame, threshold, dists)
        aps.append(interpolated_ap([m is not None for m in matches], num_gt))
    ap = float(np.mean(aps))

    matches = greedy_match(ranked, gt_by_frame, cfg.tp_error_threshold, dists)
    te, se, oe = [], [], []
    for item, j in zip(ranked, matches):
        if j is None:
            continue
        g = gt_by_frame[item.key][j]
        te.append(math.hypot(item.box.center[0] - g.center[0], item.box.center[1] - g.center[1]))
        se.append(1.0 - size_similarity(item.box, g))
        oe.append(yaw_error(item.box.yaw, g.yaw))
    if te:
        ate, ase, aoe = float(np.mean(te)), float(np.mean(se)), float(np.mean(oe))
    else:
        # No true positives: every error sits at its normalizer.
        ate, ase, aoe = cfg.ate_norm, cfg.ase_norm, cfg.aoe_norm
    normalized = [
        min(1.0, ate / cfg.ate_norm),
        min(1.0, ase / cfg.ase_norm),
        min(1.0, aoe / cfg.aoe_norm),
    ]
    cds = ap * sum(1.0 - e for e in normalized) / 3.0
    return {"ap": ap, "ate": ate, "ase": ase, "aoe": aoe, "cds": cds, "num_gt": num_gt}


def detection_metrics(
    gt: FrameSet,
    pred: FrameSet,
    cfg: MatchConfig = MatchConfig(),
    registry: CategoryRegistry = DEFAULT_REGISTRY,
) -> MetricReport:
    """AP over the distance thresholds, ATE/ASE/AOE and CDS per category.

    Means are unweighted over categories that appear in ``gt``.
    """
    report = MetricReport("detection")
    keys = all_keys(gt, pred)
    categories = gt_categories(gt)
    pred_categories = gt_categories(pred)
    for name in pred_categories:
        if name not in registry:
            msg = f"prediction category {name!r} is not registered; counted as false positives"
            logger.warning(msg)
            report.warnings.append(msg)
    for category in categories:
        report.per_category[category] = _category_metrics(gt, pred, keys, category, cfg)

    def mean(metric):
        values = [m[metric] for m in report.per_category.values()]
        return float(np.mean(values)) if values else 0.0

    report.means = {
        "mCDS": mean("cds"),
        "mAP": mean("ap"),
        "mATE": mean("ate"),
        "mASE": mean("ase"),
        "mAOE": mean("aoe"),
    }
    return report
