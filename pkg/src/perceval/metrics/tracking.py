"""CLEAR-MOT style MOTA, recall-averaged AMOTA and HOTA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import FrameKey, FrameSet, TrackedBox
from ..geometry import bev_iou
from .assignment import gated_assignment, hungarian
from .base import MatchConfig, MetricReport, all_keys, gt_categories

TrackId = tuple[str, int]


@dataclass
class _Frame:
    key: FrameKey
    gt_ids: list[TrackId]
    gt_xy: np.ndarray
    pred_ids: list[TrackId]
    pred_xy: np.ndarray
    pred_scores: np.ndarray
    gt_boxes: list = field(default_factory=list)
    pred_boxes: list = field(default_factory=list)


def _track_entries(fs: FrameSet, key: FrameKey, category: str) -> list[TrackedBox]:
    out = []
    for e in fs.frames.get(key, ()):
        if not isinstance(e, TrackedBox):
            raise ValueError(f"{fs.kind} frame set does not carry track ids")
        if e.box.category == category:
            out.append(e)
    return out


def _frames(gt: FrameSet, pred: FrameSet, category: str) -> list[_Frame]:
    frames = []
    for key in all_keys(gt, pred):
        g = _track_entries(gt, key, category)
        p = _track_entries(pred, key, category)
        frames.append(
            _Frame(
                key,
                [(key.log_id, e.track_id) for e in g],
                np.array([e.box.center[:2] for e in g]).reshape(-1, 2),
                [(key.log_id, e.track_id) for e in p],
                np.array([e.box.center[:2] for e in p]).reshape(-1, 2),
                np.array([e.box.score for e in p]),
                [e.box for e in g],
                [e.box for e in p],
            )
        )
    return frames


def _distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)


@dataclass
class ClearCounts:
    num_gt: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0

    @property
    def mota(self) -> float:
        return 1.0 - (self.fn + self.fp + self.idsw) / self.num_gt


def _clear_counts(frames: list[_Frame], gate: float, min_score: float | None = None) -> ClearCounts:
    counts = ClearCounts()
    last_match: dict[TrackId, TrackId] = {}
    for fr in frames:
        keep = np.arange(len(fr.pred_ids))
        if min_score is not None:
            keep = keep[fr.pred_scores >= min_score]
        n_gt, n_pred = len(fr.gt_ids), len(keep)
        counts.num_gt += n_gt
        pairs = []
        if n_gt and n_pred:
            d = _distance_matrix(fr.gt_xy, fr.pred_xy[keep])
            pairs = gated_assignment(d, d <= gate)
        counts.tp += len(pairs)
        counts.fn += n_gt - len(pairs)
        counts.fp += n_pred - len(pairs)
        for r, c in pairs:
            g_id, p_id = fr.gt_ids[r], fr.pred_ids[keep[c]]
            prev = last_match.get(g_id)
            if prev is not None and prev != p_id:
                counts.idsw += 1
            last_match[g_id] = p_id
    return counts


def _category_frames(gt: FrameSet, pred: FrameSet, category: str | None) -> list[_Frame]:
    # Categories never match each other, so evaluating them back to back in
    # one frame list pools their counts.
    categories = [category] if category else gt_categories(gt)
    frames = [f for c in categories for f in _frames(gt, pred, c)]
    if sum(len(f.gt_ids) for f in frames) == 0:
        raise ValueError("ground truth has no boxes; tracking metrics are undefined")
    return frames


def mota(gt: FrameSet, pred: FrameSet, cfg: MatchConfig = MatchConfig(), category: str | None = None) -> float:
    """1 - (FN + FP + IDSW) / GT with per-frame gated Hungarian matching."""
    return _clear_counts(_category_frames(gt, pred, category), cfg.tp_error_threshold).mota


def amota_from_frames(frames: list[_Frame], cfg: MatchConfig) -> float:
    gate = cfg.tp_error_threshold
    num_gt = sum(len(f.gt_ids) for f in frames)
    scores = sorted({float(s) for f in frames for s in f.pred_scores}, reverse=True)
    if not scores:
        return 0.0
    cache: dict[int, ClearCounts] = {}

    def counts_at(i: int) -> ClearCounts:
        if i not in cache:
            cache[i] = _clear_counts(frames, gate, scores[i])
        return cache[i]

    def recall_at(i: int) -> float:
        return counts_at(i).tp / num_gt

    n = cfg.amota_recall_samples
    total = 0.0
    for k in range(1, n + 1):
        r = k / n
        # TP count never drops as the score threshold is lowered; take the
        # highest threshold whose recall reaches r.
        lo, hi = 0, len(scores)
        while lo < hi:
            mid = (lo + hi) // 2
            if recall_at(mid) >= r - 1e-12:
                hi = mid
            else:
                lo = mid + 1
        if lo == len(scores):
            continue
        c = counts_at(lo)
        motar = 1.0 - (c.idsw + c.fp + c.fn - (1.0 - r) * num_gt) / (r * num_gt)
        total += min(1.0, max(0.0, motar))
    return total / n


def amota(gt: FrameSet, pred: FrameSet, cfg: MatchConfig = MatchConfig(), category: str | None = None) -> float:
    """MOTAR averaged over ``cfg.amota_recall_samples`` recall targets."""
    return amota_from_frames(_category_frames(gt, pred, category), cfg)


@dataclass
class HotaResult:
    hota: float
    deta: float
    assa: float
    per_alpha: list[dict[str, float]]


def _similarity(fr: _Frame, cfg: MatchConfig) -> np.ndarray:
    if cfg.hota_similarity == "iou":
        return np.array([[bev_iou(g, p) for p in fr.pred_boxes] for g in fr.gt_boxes]).reshape(
            len(fr.gt_boxes), len(fr.pred_boxes)
        )
    d = _distance_matrix(fr.gt_xy, fr.pred_xy)
    return np.maximum(0.0, 1.0 - d / cfg.tp_error_threshold)


def hota_from_frames(frames: list[_Frame], cfg: MatchConfig) -> HotaResult:
    sims = [
        _similarity(fr, cfg) if len(fr.gt_ids) and len(fr.pred_ids) else None for fr in frames
    ]
    gt_count: dict[TrackId, int] = {}
    pred_count: dict[TrackId, int] = {}
    for fr in frames:
        for g in fr.gt_ids:
            gt_count[g] = gt_count.get(g, 0) + 1
        for p in fr.pred_ids:
            pred_count[p] = pred_count.get(p, 0) + 1
    num_gt = sum(gt_count.values())
    num_pred = sum(pred_count.values())

    # The assignment depends on alpha only through the feasible mask, which
    # rarely changes between neighbouring alphas.
    solved: list[dict[bytes, list[tuple[int, int]]]] = [{} for _ in frames]
    per_alpha = []
    for alpha in cfg.hota_alphas:
        pair_tp: dict[tuple[TrackId, TrackId], int] = {}
        matched: list[tuple[TrackId, TrackId]] = []
        for fr, sim, cache in zip(frames, sims, solved):
            if sim is None:
                continue
            feasible = sim >= alpha
            if not feasible.any():
                continue
            mask = feasible.tobytes()
            if mask not in cache:
                cache[mask] = hungarian(np.where(feasible, -sim, 0.0))
            for r, c in cache[mask]:
                if feasible[r, c]:
                    pair = (fr.gt_ids[r], fr.pred_ids[c])
                    pair_tp[pair] = pair_tp.get(pair, 0) + 1
                    matched.append(pair)
        tp = len(matched)
        fn, fp = num_gt - tp, num_pred - tp
        deta = tp / (tp + fn + fp) if tp + fn + fp else 0.0
        if tp:
            assa = sum(
                pair_tp[pair] / (gt_count[pair[0]] + pred_count[pair[1]] - pair_tp[pair])
                for pair in matched
            ) / tp
        else:
            assa = 0.0
        per_alpha.append(
            {"alpha": alpha, "hota": float(np.sqrt(deta * assa)), "deta": deta, "assa": assa}
        )
    return HotaResult(
        hota=float(np.mean([a["hota"] for a in per_alpha])),
        deta=float(np.mean([a["deta"] for a in per_alpha])),
        assa=float(np.mean([a["assa"] for a in per_alpha])),
        per_alpha=per_alpha,
    )


def hota(gt: FrameSet, pred: FrameSet, cfg: MatchConfig = MatchConfig(), category: str | None = None) -> HotaResult:
    """HOTA averaged over the localization thresholds in ``cfg.hota_alphas``.

    With ``category=None`` all categories are pooled (matching never crosses
    categories either way).
    """
    return hota_from_frames(_category_frames(gt, pred, category), cfg)


def tracking_metrics(gt: FrameSet, pred: FrameSet, cfg: MatchConfig = MatchConfig()) -> MetricReport:
    """HOTA, AMOTA and MOTA per category plus unweighted category means."""
    report = MetricReport("tracking")
    categories = gt_categories(gt)
    if not categories:
        raise ValueError("ground truth has no boxes; tracking metrics are undefined")
    for category in categories:
        frames = _frames(gt, pred, category)
        h = hota_from_frames(frames, cfg)
        counts = _clear_counts(frames, cfg.tp_error_threshold)
        report.per_category[category] = {
            "hota": h.hota,
            "deta": h.deta,
            "assa": h.assa,
            "amota": amota_from_frames(frames, cfg),
            "mota": counts.mota,
            "num_gt": counts.num_gt,
            "tp": counts.tp,
            "fp": counts.fp,
            "fn": counts.fn,
            "idsw": counts.idsw,
        }

    def mean(metric):
        return float(np.mean([m[metric] for m in report.per_category.values()]))

    report.means = {
        "HOTA": mean("hota"),
        "AMOTA": mean("amota"),
        "MOTA": mean("mota"),
        "DetA": mean("deta"),
        "AssA": mean("assa"),
    }
    return report
