"""Domain types, validation and the JSON-lines frame format.

Every other module consumes :class:`FrameSet` objects. A frame set maps a
``(log_id, timestamp_ns)`` key to a tuple of entries whose type depends on the
frame set kind:

* ``ground_truth`` / ``detection``: :class:`Box3D`
* ``track``: :class:`TrackedBox`
* ``forecast``: :class:`Forecast`

Constructors never reject bad values (yaw is normalized, nothing else is
touched) so that :func:`validate_frameset` can report every problem at once.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

KINDS = ("ground_truth", "detection", "track", "forecast")

# Argoverse 2 sensor-dataset annotation classes.
AV2_CATEGORIES = (
    "REGULAR_VEHICLE",
    "PEDESTRIAN",
    "BICYCLIST",
    "MOTORCYCLIST",
    "WHEELED_RIDER",
    "BOLLARD",
    "CONSTRUCTION_CONE",
    "SIGN",
    "CONSTRUCTION_BARREL",
    "STOP_SIGN",
    "MOBILE_PEDESTRIAN_CROSSING_SIGN",
    "LARGE_VEHICLE",
    "BUS",
    "BOX_TRUCK",
    "TRUCK",
    "VEHICULAR_TRAILER",
    "TRUCK_CAB",
    "SCHOOL_BUS",
    "ARTICULATED_BUS",
    "MESSAGE_BOARD_TRAILER",
    "BICYCLE",
    "MOTORCYCLE",
    "WHEELED_DEVICE",
    "WHEELCHAIR",
    "STROLLER",
    "DOG",
)

DEFAULT_STEP_PERIOD = 0.5
DEFAULT_HORIZON = 6


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(float(yaw), 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class CategoryRegistry:
    """Closed set of category names accepted by validation."""

    names: tuple[str, ...] = AV2_CATEGORIES

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)


DEFAULT_REGISTRY = CategoryRegistry()


@dataclass(frozen=True)
class Box3D:
    """Oriented box in the ego frame (x forward, y left, z up)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]  # length, width, height
    yaw: float
    velocity: tuple[float, float] = (0.0, 0.0)
    score: float = 1.0
    category: str = "REGULAR_VEHICLE"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))
        object.__setattr__(self, "score", float(self.score))

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)

    def replace(self, **changes) -> "Box3D":
        fields = dict(
            center=self.center,
            size=self.size,
            yaw=self.yaw,
            velocity=self.velocity,
            score=self.score,
            category=self.category,
        )
        fields.update(changes)
        return Box3D(**fields)


@dataclass(frozen=True)
class TrackedBox:
    box: Box3D
    track_id: int

    def __post_init__(self):
        object.__setattr__(self, "track_id", int(self.track_id))


@dataclass(frozen=True)
class Trajectory:
    """Future BEV positions sampled every ``step_period`` seconds."""

    waypoints: tuple[tuple[float, float], ...]
    step_period: float = DEFAULT_STEP_PERIOD

    def __post_init__(self):
        object.__setattr__(
            self, "waypoints", tuple((float(x), float(y)) for x, y in self.waypoints)
        )
        object.__setattr__(self, "step_period", float(self.step_period))

    @property
    def horizon(self) -> int:
        return len(self.waypoints)

    @property
    def endpoint(self) -> tuple[float, float]:
        return self.waypoints[-1]


@dataclass(frozen=True)
class Forecast:
    """A detection with K scored candidate futures."""

    detection: Box3D
    modes: tuple[tuple[Trajectory, float], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "modes", tuple((traj, float(score)) for traj, score in self.modes)
        )

    @property
    def box(self) -> Box3D:
        return self.detection

    @property
    def horizon(self) -> int:
        return self.modes[0][0].horizon if self.modes else 0


Entry = Union[Box3D, TrackedBox, Forecast]


@dataclass(frozen=True, order=True)
class FrameKey:
    log_id: str
    timestamp_ns: int

    def __str__(self) -> str:
        return f"{self.log_id}@{self.timestamp_ns}"


@dataclass(frozen=True)
class FrameSet:
    """Per-frame collections of one entry kind, in insertion order."""

    kind: str
    frames: Mapping[FrameKey, tuple[Entry, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown frame set kind {self.kind!r}")
        object.__setattr__(
            self, "frames", {key: tuple(entries) for key, entries in self.frames.items()}
        )

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[FrameKey]:
        return iter(self.frames)

    def __getitem__(self, key: FrameKey) -> tuple[Entry, ...]:
        return self.frames[key]

    def keys(self):
        return self.frames.keys()

    def items(self):
        return self.frames.items()

    def logs(self) -> dict[str, list[FrameKey]]:
        """Frame keys grouped by log, keeping frame order."""
        grouped: dict[str, list[FrameKey]] = {}
        for key in self.frames:
            grouped.setdefault(key.log_id, []).append(key)
        return grouped

    def num_entries(self) -> int:
        return sum(len(entries) for entries in self.frames.values())


def entry_box(entry: Entry) -> Box3D:
    """The Box3D carried by any entry type."""
    if isinstance(entry, Box3D):
        return entry
    if isinstance(entry, TrackedBox):
        return entry.box
    if isinstance(entry, Forecast):
        return entry.detection
    raise TypeError(f"not a frame entry: {type(entry).__name__}")


def with_box(entry: Entry, box: Box3D) -> Entry:
    """Return ``entry`` with its box swapped for ``box``."""
    if isinstance(entry, Box3D):
        return box
    if isinstance(entry, TrackedBox):
        return TrackedBox(box, entry.track_id)
    if isinstance(entry, Forecast):
        return Forecast(box, entry.modes)
    raise TypeError(f"not a frame entry: {type(entry).__name__}")


_ENTRY_TYPES = {
    "ground_truth": Box3D,
    "detection": Box3D,
    "track": TrackedBox,
    "forecast": Forecast,
}


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    frame: FrameKey
    index: int | None
    rule: str

    def __str__(self) -> str:
        where = str(self.frame) if self.index is None else f"{self.frame} entry {self.index}"
        return f"{where}: {self.rule}"


def _finite(values: Iterable[float]) -> bool:
    return all(math.isfinite(v) for v in values)


def _box_violations(box: Box3D, registry: CategoryRegistry) -> list[str]:
    rules = []
    if not _finite(box.center + box.size + box.velocity + (box.yaw, box.score)):
        rules.append("non-finite value")
    if not all(s > 0 for s in box.size):
        rules.append("size not positive")
    if not 0.0 <= box.score <= 1.0:
        rules.append("score out of range")
    if not -math.pi < box.yaw <= math.pi:
        rules.append("yaw not normalized")
    if not box.category:
        rules.append("empty category")
    elif box.category not in registry:
        rules.append("unknown category")
    return rules


def _forecast_violations(fc: Forecast) -> list[str]:
    rules = []
    if not fc.modes:
        return ["forecast has no modes"]
    horizons = {traj.horizon for traj, _ in fc.modes}
    periods = {traj.step_period for traj, _ in fc.modes}
    if 0 in horizons:
        rules.append("empty trajectory")
    if len(horizons) > 1:
        rules.append("inconsistent horizon")
    if len(periods) > 1 or not all(p > 0 for p in periods):
        rules.append("inconsistent step period")
    for traj, score in fc.modes:
        if not _finite(v for wp in traj.waypoints for v in wp):
            rules.append("non-finite waypoint")
            break
    if not all(0.0 <= score <= 1.0 for _, score in fc.modes):
        rules.append("mode score out of range")
    return rules


def validate_frameset(
    fs: FrameSet, registry: CategoryRegistry = DEFAULT_REGISTRY
) -> list[Violation]:
    """Check every type invariant and report violations without raising.

    Returns:
        Violations in frame order then entry order; empty when ``fs`` is valid.
    """
    violations: list[Violation] = []
    expected = _ENTRY_TYPES[fs.kind]
    last_ts: dict[str, int] = {}
    for key, entries in fs.frames.items():
        if key.timestamp_ns < 0:
            violations.append(Violation(key, None, "negative timestamp"))
        prev = last_ts.get(key.log_id)
        if prev is not None and key.timestamp_ns <= prev:
            violations.append(Violation(key, None, "timestamps not increasing"))
        last_ts[key.log_id] = key.timestamp_ns

        seen_ids: set[int] = set()
        for i, entry in enumerate(entries):
            if not isinstance(entry, expected):
                violations.append(Violation(key, i, f"entry is not a {expected.__name__}"))
                continue
            rules = _box_violations(entry_box(entry), registry)
            if isinstance(entry, TrackedBox):
                if entry.track_id < 0:
                    rules.append("negative track_id")
                if entry.track_id in seen_ids:
                    rules.append("duplicate track_id")
                seen_ids.add(entry.track_id)
            elif isinstance(entry, Forecast):
                rules.extend(_forecast_violations(entry))
            violations.extend(Violation(key, i, rule) for rule in rules)
    return violations


class FrameSetError(ValueError):
    """Raised when a frame set cannot be parsed or fails validation."""


def ensure_valid(fs: FrameSet, registry: CategoryRegistry = DEFAULT_REGISTRY, name: str = "input"):
    violations = validate_frameset(fs, registry)
    if violations:
        shown = "; ".join(str(v) for v in violations[:10])
        more = f" (+{len(violations) - 10} more)" if len(violations) > 10 else ""
        raise FrameSetError(f"{name}: {len(violations)} violation(s): {shown}{more}")


# --------------------------------------------------------------------------
# JSON-lines serialization
# --------------------------------------------------------------------------


def _box_record(box: Box3D) -> dict:
    cx, cy, cz = box.center
    length, width, height = box.size
    return {
        "cx": cx,
        "cy": cy,
        "cz": cz,
        "l": length,
        "w": width,
        "h": height,
        "yaw": box.yaw,
        "vx": box.velocity[0],
        "vy": box.velocity[1],
        "score": box.score,
        "category": box.category,
    }


def entry_to_record(entry: Entry) -> dict:
    record = _box_record(entry_box(entry))
    if isinstance(entry, TrackedBox):
        record["track_id"] = entry.track_id
    elif isinstance(entry, Forecast):
        modes = []
        for traj, score in entry.modes:
            mode = {"score": score, "waypoints": [[x, y] for x, y in traj.waypoints]}
            if traj.step_period != DEFAULT_STEP_PERIOD:
                mode["step_period"] = traj.step_period
            modes.append(mode)
        record["modes"] = modes
    return record


def frame_to_line(key: FrameKey, entries: Sequence[Entry]) -> str:
    record = {
        "log_id": key.log_id,
        "timestamp_ns": key.timestamp_ns,
        "boxes": [entry_to_record(e) for e in entries],
    }
    return json.dumps(record, allow_nan=False)


def write_frameset(fs: FrameSet, path: str | os.PathLike) -> None:
    """Write ``fs`` as JSON lines; floats keep full precision."""
    path = Path(path)
    lines = [frame_to_line(key, entries) for key, entries in fs.frames.items()]
    text = "".join(line + "\n" for line in lines)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


_BOX_FIELDS = ("cx", "cy", "cz", "l", "w", "h", "yaw", "vx", "vy", "score", "category")


def _number(record: dict, name: str, lineno: int) -> float:
    value = record[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FrameSetError(f"line {lineno}: field {name!r} must be a number")
    return float(value)


def _record_kind(record: dict) -> str | None:
    if "track_id" in record:
        return "track"
    if "modes" in record:
        return "forecast"
    return None


def _parse_entry(record: dict, kind: str, lineno: int) -> Entry:
    if not isinstance(record, dict):
        raise FrameSetError(f"line {lineno}: box record must be an object")
    for name in _BOX_FIELDS:
        if name not in record:
            raise FrameSetError(f"line {lineno}: missing field {name!r}")
    if not isinstance(record["category"], str):
        raise FrameSetError(f"line {lineno}: field 'category' must be a string")
    box = Box3D(
        center=tuple(_number(record, n, lineno) for n in ("cx", "cy", "cz")),
        size=tuple(_number(record, n, lineno) for n in ("l", "w", "h")),
        yaw=_number(record, "yaw", lineno),
        velocity=(_number(record, "vx", lineno), _number(record, "vy", lineno)),
        score=_number(record, "score", lineno),
        category=record["category"],
    )
    has_track = "track_id" in record
    has_modes = "modes" in record
    if has_track != (kind == "track") or has_modes != (kind == "forecast"):
        found = _record_kind(record) or "plain box"
        raise FrameSetError(f"line {lineno}: kind mismatch, expected {kind} but found {found}")
    if kind == "track":
        track_id = record["track_id"]
        if isinstance(track_id, bool) or not isinstance(track_id, int):
            raise FrameSetError(f"line {lineno}: field 'track_id' must be an integer")
        return TrackedBox(box, track_id)
    if kind == "forecast":
        modes = []
        if not isinstance(record["modes"], list):
            raise FrameSetError(f"line {lineno}: field 'modes' must be a list")
        for mode in record["modes"]:
            if not isinstance(mode, dict) or "score" not in mode or "waypoints" not in mode:
                raise FrameSetError(f"line {lineno}: field 'modes' needs score and waypoints")
            try:
                waypoints = [(float(x), float(y)) for x, y in mode["waypoints"]]
            except (TypeError, ValueError) as exc:
                raise FrameSetError(f"line {lineno}: field 'waypoints' malformed") from exc
            period = mode.get("step_period", DEFAULT_STEP_PERIOD)
            modes.append(
                (Trajectory(waypoints, float(period)), _number(mode, "score", lineno))
            )
        return Forecast(box, modes)
    return box


def infer_kind(path: str | os.PathLike, default: str = "detection") -> str:
    """Guess the kind of a frame-set file from its first box record."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                boxes = json.loads(line).get("boxes") or []
            except (json.JSONDecodeError, AttributeError):
                return default
            if boxes and isinstance(boxes[0], dict):
                return _record_kind(boxes[0]) or default
    return default


def read_frameset(path: str | os.PathLike, kind: str) -> FrameSet:
    """Parse a JSON-lines frame file.

    Raises:
        FrameSetError: on malformed JSON, missing fields, duplicate frame keys,
            or records whose optional fields do not match ``kind``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown frame set kind {kind!r}")
    frames: dict[FrameKey, tuple[Entry, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FrameSetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise FrameSetError(f"line {lineno}: frame record must be an object")
            for name in ("log_id", "timestamp_ns", "boxes"):
                if name not in record:
                    raise FrameSetError(f"line {lineno}: missing field {name!r}")
            ts = record["timestamp_ns"]
            if isinstance(ts, bool) or not isinstance(ts, int):
                raise FrameSetError(f"line {lineno}: field 'timestamp_ns' must be an integer")
            if not isinstance(record["log_id"], str):
                raise FrameSetError(f"line {lineno}: field 'log_id' must be a string")
            if not isinstance(record["boxes"], list):
                raise FrameSetError(f"line {lineno}: field 'boxes' must be a list")
            key = FrameKey(record["log_id"], ts)
            if key in frames:
                raise FrameSetError(f"line {lineno}: duplicate frame {key}")
            frames[key] = tuple(_parse_entry(b, kind, lineno) for b in record["boxes"])
    return FrameSet(kind, frames)
