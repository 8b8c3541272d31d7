"""Forecasting mAP (mAP_F), ADE and FDE over motion cohorts.

A prediction counts as a true positive at threshold ``d`` only when its box
matches a ground-truth agent within ``d`` at the current frame and its best
mode ends strictly closer than ``d`` to that agent's realized endpoint.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import Box3D, Forecast, FrameKey, FrameSet
from .base import MatchConfig, MetricReport, all_keys, interpolated_ap, mean_or_none

COHORTS = ("static", "linear", "nonlinear")


def classify_motion(
    box: Box3D, waypoints: np.ndarray, step_period: float, cfg: MatchConfig
) -> str:
    """Cohort of an agent from its future path.

    static: mean speed along the path (starting at the box center) below
    ``cfg.static_speed``. linear: every waypoint within
    ``cfg.linear_deviation`` of the constant-velocity extrapolation of the
    box velocity. nonlinear: everything else.
    """
    path = np.vstack([np.array(box.center[:2]), waypoints])
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    if steps.mean() / step_period < cfg.static_speed:
        return "static"
    t = step_period * np.arange(1, len(waypoints) + 1)
    extrapolated = np.array(box.center[:2]) + t[:, None] * np.array(box.velocity)
    if np.linalg.norm(waypoints - extrapolated, axis=1).max() < cfg.linear_deviation:
        return "linear"
    return "nonlinear"


class _Agent:
    __slots__ = ("box", "future", "period", "cohort")

    def __init__(self, fc: Forecast, cfg: MatchConfig):
        self.box = fc.detection
        traj = fc.modes[0][0]
        self.future = np.array(traj.waypoints)
        self.period = traj.step_period
        self.cohort = classify_motion(self.box, self.future, self.period, cfg)


class _Pred:
    __slots__ = ("key", "box", "modes", "top_mode", "period")

    def __init__(self, key: FrameKey, fc: Forecast):
        self.key = key
        self.box = fc.detection
        self.modes = [np.array(traj.waypoints) for traj, _ in fc.modes]
        self.period = fc.modes[0][0].step_period
        best = max(range(len(fc.modes)), key=lambda i: fc.modes[i][1])
        self.top_mode = self.modes[best]


def _best_mode(pred: _Pred, agent: _Agent) -> tuple[float, float]:
    """(ADE, FDE) of the minimum-FDE mode against the agent's future."""
    best = None
    for mode in pred.modes:
        err = np.linalg.norm(mode - agent.future, axis=1)
        cand = (float(err[-1]), float(err.mean()))
        if best is None or cand[0] < best[0]:
            best = cand
    fde, ade = best
    return ade, fde


def _match(preds: list[_Pred], agents: dict[FrameKey, list[_Agent]], threshold: float):
    """Greedy score-ordered center matching; returns matched agent or None per pred."""
    taken = {key: [False] * len(a) for key, a in agents.items()}
    out = []
    for p in preds:
        best, best_d = None, math.inf
        for j, agent in enumerate(agents.get(p.key, ())):
            if taken[p.key][j]:
                continue
            d = math.hypot(p.box.center[0] - agent.box.center[0], p.box.center[1] - agent.box.center[1])
            if d <= threshold and d < best_d:
                best, best_d = j, d
        if best is None:
            out.append(None)
        else:
            taken[p.key][best] = True
            out.append(agents[p.key][best])
    return out


def _check_horizons(gt: FrameSet, pred: FrameSet) -> None:
    horizons = {fc.horizon for entries in gt.frames.values() for fc in entries}
    pred_h = {
        traj.horizon
        for entries in pred.frames.values()
        for fc in entries
        for traj, _ in fc.modes
    }
    if len(horizons) > 1:
        raise ValueError(f"ground truth mixes horizons {sorted(horizons)}")
    if pred_h and horizons and pred_h != horizons:
        raise ValueError(
            f"horizon mismatch: ground truth {sorted(horizons)} vs predictions {sorted(pred_h)}"
        )


def forecasting_metrics(gt: FrameSet, pred: FrameSet, cfg: MatchConfig = MatchConfig()) -> MetricReport:
    """mAP_F, ADE and FDE per category and cohort.

    Ground-truth forecasts carry the realized future as their first mode.
    Unmatched predictions are assigned to a cohort from their highest-scoring
    mode. ADE/FDE average over predictions matched at
    ``cfg.tp_error_threshold`` at the current frame, using the minimum-FDE
    mode.
    """
    for fs in (gt, pred):
        if fs.kind != "forecast":
            raise ValueError(f"forecasting metrics need forecast frame sets, got {fs.kind}")
    _check_horizons(gt, pred)
    keys = all_keys(gt, pred)
    report = MetricReport("forecasting")

    agents_all = {key: [_Agent(fc, cfg) for fc in gt.frames.get(key, ())] for key in keys}
    categories: dict[str, None] = {}
    for agents in agents_all.values():
        for a in agents:
            categories.setdefault(a.box.category, None)

    for category in categories:
        agents = {k: [a for a in v if a.box.category == category] for k, v in agents_all.items()}
        preds = [
            _Pred(key, fc)
            for key in keys
            for fc in pred.frames.get(key, ())
            if fc.detection.category == category
        ]
        preds.sort(key=lambda p: -p.box.score)
        own_cohort = [classify_motion(p.box, p.top_mode, p.period, cfg) for p in preds]
        num_gt = {c: 0 for c in COHORTS}
        for v in agents.values():
            for a in v:
                num_gt[a.cohort] += 1

        aps = {c: [] for c in COHORTS}
        for threshold in cfg.distance_thresholds:
            flags = {c: [] for c in COHORTS}
            for p, agent, cohort in zip(preds, _match(preds, agents, threshold), own_cohort):
                if agent is None:
                    flags[cohort].append(False)
                    continue
                _, fde = _best_mode(p, agent)
                # endpoint bound is strict: an endpoint exactly d away misses
                flags[agent.cohort].append(fde < threshold)
            for c in COHORTS:
                aps[c].append(interpolated_ap(flags[c], num_gt[c]))

        errors = {c: ([], []) for c in COHORTS}
        for p, agent in zip(preds, _match(preds, agents, cfg.tp_error_threshold)):
            if agent is not None:
                ade, fde = _best_mode(p, agent)
                errors[agent.cohort][0].append(ade)
                errors[agent.cohort][1].append(fde)

        per_cohort = {}
        for c in COHORTS:
            if num_gt[c] == 0:
                continue
            ades, fdes = errors[c]
            per_cohort[c] = {
                "map_f": float(np.mean(aps[c])),
                "ade": float(np.mean(ades)) if ades else None,
                "fde": float(np.mean(fdes)) if fdes else None,
                "num_gt": num_gt[c],
            }
        report.per_cohort[category] = per_cohort
        report.per_category[category] = {
            "map_f": mean_or_none(v["map_f"] for v in per_cohort.values()),
            "ade": mean_or_none(v["ade"] for v in per_cohort.values()),
            "fde": mean_or_none(v["fde"] for v in per_cohort.values()),
        }

    cells = [v for cohorts in report.per_cohort.values() for v in cohorts.values()]
    report.means = {
        "mAP_F": mean_or_none(v["map_f"] for v in cells) or 0.0,
        "ADE": mean_or_none(v["ade"] for v in cells),
        "FDE": mean_or_none(v["fde"] for v in cells),
    }
    return report
