"""Deterministic synthetic scenes and simulated model outputs.

Ground-truth agents move in one of three ways: parked, straight at constant
speed, or along a constant yaw-rate arc. Simulated models perturb the truth
with Gaussian noise, drop some agents, add false positives, and forecast the
future from their noisy box.

All randomness comes from PCG64 streams keyed by ``(seed, log, stream)`` so
logs can be generated in any order or in parallel with identical output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ._parallel import ordered_map
from .core import (
    DEFAULT_HORIZON,
    DEFAULT_STEP_PERIOD,
    Box3D,
    Forecast,
    FrameKey,
    FrameSet,
    TrackedBox,
    Trajectory,
    entry_box,
)
from .ensemble import ModelOutput

MOTIONS = ("static", "constant_velocity", "turning")

# length, width, height (m) and speed range (m/s) per category
CATEGORY_PROFILES = {
    "REGULAR_VEHICLE": ((4.6, 1.9, 1.6), (3.0, 10.0)),
    "PEDESTRIAN": ((0.7, 0.7, 1.75), (0.8, 1.8)),
    "BICYCLIST": ((1.8, 0.7, 1.7), (2.5, 6.0)),
    "BUS": ((12.0, 2.6, 3.2), (3.0, 8.0)),
    "LARGE_VEHICLE": ((7.5, 2.4, 3.0), (3.0, 8.0)),
}
_GENERIC_PROFILE = ((2.0, 1.0, 1.5), (1.0, 4.0))

BASE_TIMESTAMP_NS = 315_969_000_000_000_000
FP_TRACK_ID_BASE = 1_000_000


@dataclass(frozen=True)
class NoiseModel:
    """How one simulated model departs from the truth."""

    model_id: str = "model"
    weight: float = 1.0
    center_sigma: float = 0.0  # m, per BEV axis
    size_sigma: float = 0.0  # log-scale std of each extent
    yaw_sigma: float = 0.0  # rad
    velocity_sigma: float = 0.0  # m/s, per axis
    traj_sigma: float = 0.0  # m, per waypoint axis
    score_calibration: float = 1.0  # score decays as exp(-calibration * center error)
    score_jitter: float = 0.0  # multiplicative uniform jitter in [0, 1]
    drop_rate: float = 0.0
    fp_rate: float = 0.0  # expected false positives per agent per frame
    id_switch_rate: float = 0.0  # chance per frame that a track gets a new id
    num_modes: int = 1
    mode_spacing: float = 3.0  # m, lateral gap between alternative modes (plus 1 m per m/s)

    def __post_init__(self):
        sigmas = (
            self.center_sigma,
            self.size_sigma,
            self.yaw_sigma,
            self.velocity_sigma,
            self.traj_sigma,
            self.score_calibration,
        )
        if any(s < 0 for s in sigmas):
            raise ValueError(f"{self.model_id}: noise parameters must be non-negative")
        rates = (self.score_jitter, self.drop_rate, self.fp_rate, self.id_switch_rate)
        if any(not 0.0 <= r <= 1.0 for r in rates):
            raise ValueError(f"{self.model_id}: rates must lie in [0, 1]")
        if self.num_modes < 1 or self.weight <= 0:
            raise ValueError(f"{self.model_id}: need num_modes >= 1 and weight > 0")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    num_logs: int = 3
    frames_per_log: int = 30
    agents_per_log: int = 20
    horizon: int = DEFAULT_HORIZON
    step_period: float = DEFAULT_STEP_PERIOD
    category_mix: dict = field(
        default_factory=lambda: {"REGULAR_VEHICLE": 0.5, "PEDESTRIAN": 0.3, "BICYCLIST": 0.2}
    )
    motion_mix: dict = field(
        default_factory=lambda: {"static": 0.3, "constant_velocity": 0.4, "turning": 0.3}
    )
    spawn_radius: float = 60.0
    models: tuple[NoiseModel, ...] = (NoiseModel(),)

    def __post_init__(self):
        object.__setattr__(
            self,
            "models",
            tuple(m if isinstance(m, NoiseModel) else NoiseModel(**m) for m in self.models),
        )
        if min(self.num_logs, self.frames_per_log, self.agents_per_log, self.horizon) < 1:
            raise ValueError("counts in a scene spec must be positive")
        if self.step_period <= 0 or self.spawn_radius <= 0:
            raise ValueError("step_period and spawn_radius must be positive")
        for name, mix in (("category_mix", self.category_mix), ("motion_mix", self.motion_mix)):
            if not mix or any(v < 0 for v in mix.values()):
                raise ValueError(f"{name} needs non-negative fractions")
            if abs(sum(mix.values()) - 1.0) > 1e-9:
                raise ValueError(f"{name} fractions must sum to 1")
        unknown = set(self.motion_mix) - set(MOTIONS)
        if unknown:
            raise ValueError(f"unknown motion classes {sorted(unknown)}")
        if not self.models:
            raise ValueError("scene spec needs at least one model")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValueError("model ids must be unique")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene spec field(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["models"] = [asdict(m) for m in self.models]
        return out


@dataclass(frozen=True)
class SynthResult:
    gt_tracks: FrameSet
    gt_futures: FrameSet
    model_outputs: list[ModelOutput]
    model_tracks: list[FrameSet]


@dataclass
class _Agent:
    agent_id: int
    category: str
    motion: str
    size: tuple[float, float, float]
    x0: float
    y0: float
    z: float
    yaw0: float
    speed: float
    yaw_rate: float

    def pose(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x, y, heading) at times ``t`` seconds after the log start."""
        if self.motion == "turning":
            heading = self.yaw0 + self.yaw_rate * t
            r = self.speed / self.yaw_rate
            x = self.x0 + r * (np.sin(heading) - math.sin(self.yaw0))
            y = self.y0 - r * (np.cos(heading) - math.cos(self.yaw0))
            return x, y, heading
        heading = np.full_like(t, self.yaw0, dtype=float)
        return (
            self.x0 + self.speed * math.cos(self.yaw0) * t,
            self.y0 + self.speed * math.sin(self.yaw0) * t,
            heading,
        )

    def box(self, t: float) -> Box3D:
        x, y, heading = self.pose(np.array([t]))
        h = float(heading[0])
        return Box3D(
            center=(float(x[0]), float(y[0]), self.z),
            size=self.size,
            yaw=h,
            velocity=(self.speed * math.cos(h), self.speed * math.sin(h)),
            score=1.0,
            category=self.category,
        )

    def future(self, t: float, horizon: int, period: float) -> np.ndarray:
        times = t + period * np.arange(1, horizon + 1)
        x, y, _ = self.pose(times)
        return np.stack([x, y], axis=1)


def _rng(seed: int, log_index: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, log_index, stream]))


def _profile(category: str):
    return CATEGORY_PROFILES.get(category, _GENERIC_PROFILE)


def _sample_agents(spec: SceneSpec, log_index: int) -> list[_Agent]:
    rng = _rng(spec.seed, log_index, 0)
    cats = sorted(spec.category_mix)
    cat_p = np.array([spec.category_mix[c] for c in cats])
    motions = [m for m in MOTIONS if m in spec.motion_mix]
    mot_p = np.array([spec.motion_mix[m] for m in motions])
    t_all = spec.step_period * np.arange(spec.frames_per_log + spec.horizon)

    agents: list[_Agent] = []
    paths: list[np.ndarray] = []
    radii: list[float] = []
    attempts = 0
    while len(agents) < spec.agents_per_log:
        attempts += 1
        if attempts > 5000 * spec.agents_per_log:
            raise RuntimeError("could not place non-overlapping agents; enlarge spawn_radius")
        category = cats[rng.choice(len(cats), p=cat_p / cat_p.sum())]
        motion = motions[rng.choice(len(motions), p=mot_p / mot_p.sum())]
        (length, width, height), (vmin, vmax) = _profile(category)
        scale = rng.uniform(0.9, 1.1)
        size = (length * scale, width * scale, height * scale)
        speed = 0.0 if motion == "static" else rng.uniform(vmin, vmax)
        yaw_rate = 0.0
        if motion == "turning":
            yaw_rate = rng.uniform(0.15, 0.4) * rng.choice([-1.0, 1.0])
        x0, y0 = rng.uniform(-spec.spawn_radius, spec.spawn_radius, size=2)
        agent = _Agent(
            agent_id=len(agents),
            category=category,
            motion=motion,
            size=size,
            x0=float(x0),
            y0=float(y0),
            z=size[2] / 2.0,
            yaw0=float(rng.uniform(-math.pi, math.pi)),
            speed=float(speed),
            yaw_rate=float(yaw_rate),
        )
        x, y, _ = agent.pose(t_all)
        path = np.stack([x, y], axis=1)
        radius = 0.5 * math.hypot(size[0], size[1])
        # keep footprints disjoint at every sampled time, with a margin
        if all(
            np.min(np.linalg.norm(path - other, axis=1)) > radius + r_other + 1.0
            for other, r_other in zip(paths, radii)
        ):
            agents.append(agent)
            paths.append(path)
            radii.append(radius)
    return agents


def _frame_keys(spec: SceneSpec, log_index: int) -> list[FrameKey]:
    log_id = f"synth-{spec.seed:06d}-{log_index:03d}"
    step_ns = int(round(spec.step_period * 1e9))
    return [
        FrameKey(log_id, BASE_TIMESTAMP_NS + k * step_ns) for k in range(spec.frames_per_log)
    ]


def _lateral(heading: float) -> np.ndarray:
    return np.array([-math.sin(heading), math.cos(heading)])


def _mode_set(
    anchor: np.ndarray, offsets: np.ndarray, heading: float, speed: float, nm: NoiseModel, period: float
) -> list[tuple[Trajectory, float]]:
    """Primary mode plus laterally shifted alternatives."""
    modes = []
    k_total = nm.num_modes
    for k in range(k_total):
        pts = anchor + offsets
        if k:
            side = 1.0 if k % 2 else -1.0
            shift = math.ceil(k / 2) * (nm.mode_spacing + speed)
            pts = pts + side * shift * _lateral(heading)
        score = 1.0 if k_total == 1 else (0.6 if k == 0 else 0.4 / (k_total - 1))
        modes.append((Trajectory([tuple(p) for p in pts.tolist()], period), score))
    return modes


def _simulate_model(spec, log_index, model_index, agents, keys):
    nm = spec.models[model_index]
    rng = _rng(spec.seed, log_index, 1 + model_index)
    cats = sorted(spec.category_mix)
    period, horizon = spec.step_period, spec.horizon
    forecasts: dict[FrameKey, list[Forecast]] = {}
    tracks: dict[FrameKey, list[TrackedBox]] = {}
    track_of = {a.agent_id: a.agent_id for a in agents}
    next_id = FP_TRACK_ID_BASE
    for k, key in enumerate(keys):
        t = k * period
        frame_fc, frame_tr = [], []
        for agent in agents:
            # fixed draw layout per agent so noise levels share random numbers
            z_center = rng.standard_normal(2)
            z_size = rng.standard_normal(3)
            z_yaw = rng.standard_normal()
            z_vel = rng.standard_normal(2)
            z_traj = rng.standard_normal((horizon, 2))
            u_drop, u_jitter, u_switch = rng.random(3)
            if u_drop < nm.drop_rate:
                continue
            if u_switch < nm.id_switch_rate:
                track_of[agent.agent_id] = next_id
                next_id += 1
            truth = agent.box(t)
            offset = nm.center_sigma * z_center
            center = (truth.center[0] + offset[0], truth.center[1] + offset[1], truth.center[2])
            size = tuple(s * math.exp(nm.size_sigma * z) for s, z in zip(truth.size, z_size))
            score = math.exp(-nm.score_calibration * float(np.hypot(*offset)))
            score *= 1.0 - nm.score_jitter * u_jitter
            box = Box3D(
                center=center,
                size=size,
                yaw=truth.yaw + nm.yaw_sigma * z_yaw,
                velocity=tuple(np.array(truth.velocity) + nm.velocity_sigma * z_vel),
                score=score,
                category=truth.category,
            )
            future = agent.future(t, horizon, period)
            displacement = future - np.array(truth.center[:2]) + nm.traj_sigma * z_traj
            modes = _mode_set(
                np.array(center[:2]), displacement, truth.yaw, agent.speed, nm, period
            )
            frame_fc.append(Forecast(box, modes))
            frame_tr.append(TrackedBox(box, track_of[agent.agent_id]))

        num_fp = rng.poisson(nm.fp_rate * len(agents)) if nm.fp_rate > 0 else 0
        for _ in range(num_fp):
            category = cats[int(rng.integers(len(cats)))]
            (length, width, height), (vmin, vmax) = _profile(category)
            x, y = rng.uniform(-spec.spawn_radius, spec.spawn_radius, size=2)
            heading = float(rng.uniform(-math.pi, math.pi))
            speed = float(rng.uniform(0.0, vmax))
            vel = speed * np.array([math.cos(heading), math.sin(heading)])
            box = Box3D(
                center=(float(x), float(y), height / 2.0),
                size=(length, width, height),
                yaw=heading,
                velocity=tuple(vel),
                score=float(rng.uniform(0.0, 0.6)),
                category=category,
            )
            steps = period * np.arange(1, horizon + 1)
            displacement = steps[:, None] * vel[None, :]
            modes = _mode_set(np.array([x, y]), displacement, heading, speed, nm, period)
            frame_fc.append(Forecast(box, modes))
            frame_tr.append(TrackedBox(box, next_id))
            next_id += 1
        forecasts[key] = frame_fc
        tracks[key] = frame_tr
    return forecasts, tracks


def _generate_log(spec: SceneSpec, log_index: int):
    agents = _sample_agents(spec, log_index)
    keys = _frame_keys(spec, log_index)
    gt_tracks, gt_futures = {}, {}
    for k, key in enumerate(keys):
        t = k * spec.step_period
        boxes = [(a, a.box(t)) for a in agents]
        gt_tracks[key] = [TrackedBox(box, a.agent_id) for a, box in boxes]
        gt_futures[key] = [
            Forecast(
                box,
                [(Trajectory([tuple(p) for p in a.future(t, spec.horizon, spec.step_period).tolist()], spec.step_period), 1.0)],
            )
            for a, box in boxes
        ]
    models = [_simulate_model(spec, log_index, i, agents, keys) for i in range(len(spec.models))]
    return gt_tracks, gt_futures, models


def generate(spec: SceneSpec, threads: int = 1) -> SynthResult:
    """Build ground truth and simulated model outputs for ``spec``.

    Returns:
        Ground-truth tracks, ground-truth futures (one mode holding the
        realized path), one forecast :class:`ModelOutput` per noise model and
        the matching tracked boxes per model.
    """
    logs = ordered_map(lambda i: _generate_log(spec, i), range(spec.num_logs), threads)
    gt_tracks, gt_futures = {}, {}
    model_fc = [dict() for _ in spec.models]
    model_tr = [dict() for _ in spec.models]
    for tracks, futures, models in logs:
        gt_tracks.update(tracks)
        gt_futures.update(futures)
        for i, (fc, tr) in enumerate(models):
            model_fc[i].update(fc)
            model_tr[i].update(tr)
    outputs = [
        ModelOutput(nm.model_id, FrameSet("forecast", fc), nm.weight)
        for nm, fc in zip(spec.models, model_fc)
    ]
    return SynthResult(
        gt_tracks=FrameSet("track", gt_tracks),
        gt_futures=FrameSet("forecast", gt_futures),
        model_outputs=outputs,
        model_tracks=[FrameSet("track", tr) for tr in model_tr],
    )


def detections_of(fs: FrameSet) -> FrameSet:
    """Strip track ids or forecasts, leaving plain detections."""
    return FrameSet("detection", {k: [entry_box(e) for e in v] for k, v in fs.items()})


# --------------------------------------------------------------------------
# reference AP, written independently of perceval.metrics
# --------------------------------------------------------------------------


def oracle_detection_ap(gt: FrameSet, pred: FrameSet, cfg) -> dict[str, float]:
    """Naive per-category AP used to cross-check the metrics module.

    Plain loops over every prediction and ground-truth box; the precision
    envelope is taken by brute force over all later ranks.
    """
    gt_rows = []  # (frame, category, x, y)
    for key, entries in gt.frames.items():
        for e in entries:
            b = entry_box(e)
            gt_rows.append((key, b.category, b.center[0], b.center[1]))
    pred_rows = []  # (score, order, frame, category, x, y)
    order = 0
    frame_order = list(gt.frames.keys()) + [k for k in pred.frames if k not in gt.frames]
    for key in frame_order:
        for e in pred.frames.get(key, ()):
            b = entry_box(e)
            pred_rows.append((b.score, order, key, b.category, b.center[0], b.center[1]))
            order += 1

    result = {}
    for category in dict.fromkeys(row[1] for row in gt_rows):
        gts = [r for r in gt_rows if r[1] == category]
        preds = [r for r in pred_rows if r[3] == category]
        # descending score; equal scores keep input order
        preds = sorted(preds, key=lambda r: (-r[0], r[1]))
        per_threshold = []
        for thr in cfg.distance_thresholds:
            used = [False] * len(gts)
            hits = []
            for p in preds:
                best_j, best_d = -1, None
                for j, g in enumerate(gts):
                    if used[j] or g[0] != p[2]:
                        continue
                    d = math.sqrt((p[4] - g[2]) ** 2 + (p[5] - g[3]) ** 2)
                    if d <= thr and (best_d is None or d < best_d):
                        best_j, best_d = j, d
                if best_j >= 0:
                    used[best_j] = True
                hits.append(best_j >= 0)
            n = len(gts)
            prec = []
            rec = []
            tp = 0
            for i, h in enumerate(hits):
                tp += h
                prec.append(tp / (i + 1))
                rec.append(tp / n)
            area = 0.0
            last = 0.0
            for i in range(len(hits)):
                if rec[i] > last:
                    area += (rec[i] - last) * max(prec[i:])
                    last = rec[i]
            per_threshold.append(area)
        result[category] = sum(per_threshold) / len(per_threshold)
    return result
