"""Rotated BEV box geometry, NMS and test-time-augmentation transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import Box3D, Entry, Forecast, FrameSet, Trajectory, entry_box, with_box

Point = tuple[float, float]

DEFAULT_TTA_SCALES = (0.95, 1.0, 1.05)


def bev_corners(box: Box3D) -> list[Point]:
    """Footprint corners in counterclockwise order."""
    cx, cy = box.center[0], box.center[1]
    hl, hw = box.size[0] / 2.0, box.size[1] / 2.0
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    corners = []
    for dx, dy in ((hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)):
        corners.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return corners


def polygon_area(vertices: Sequence[Point]) -> float:
    """Signed shoelace area; positive for counterclockwise vertices."""
    n = len(vertices)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * acc


def clip_polygon(subject: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW ``clip``."""
    output = list(subject)
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p: Point) -> float:
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return output


def _intersect(p: Point, q: Point, sp: float, sq: float) -> Point:
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _same_footprint(a: Box3D, b: Box3D) -> bool:
    return a.center[:2] == b.center[:2] and a.size[:2] == b.size[:2] and a.yaw == b.yaw


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection over union of the two rotated BEV footprints."""
    if _same_footprint(a, b):
        return 1.0
    reach = 0.5 * (math.hypot(a.size[0], a.size[1]) + math.hypot(b.size[0], b.size[1]))
    if center_distance(a, b) >= reach:
        return 0.0
    area_a = a.size[0] * a.size[1]
    area_b = b.size[0] * b.size[1]
    inter = polygon_area(clip_polygon(bev_corners(a), bev_corners(b)))
    if inter <= 1e-12 * min(area_a, area_b):
        return 0.0  # touching edges or corners only
    inter = min(inter, area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between BEV centers (z ignored)."""
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])


def yaw_error(a: float, b: float) -> float:
    """Smallest absolute angle between two headings, in [0, pi]."""
    return abs(math.remainder(a - b, 2.0 * math.pi))


def nms(boxes: Sequence[Box3D], iou_threshold: float) -> list[Box3D]:
    """Greedy per-category non-maximum suppression.

    Boxes are visited in descending score order (stable for ties). A box is
    kept unless a kept box of the same category overlaps it with IoU above
    ``iou_threshold``.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept: list[Box3D] = []
    by_category: dict[str, list[Box3D]] = {}
    for i in order:
        box = boxes[i]
        same = by_category.setdefault(box.category, [])
        if any(bev_iou(box, other) > iou_threshold for other in same):
            continue
        same.append(box)
        kept.append(box)
    return kept


# --------------------------------------------------------------------------
# test-time augmentation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TtaTransform:
    """Global scaling followed by optional mirror flips.

    ``flip_xz`` mirrors across the xz-plane (negates y); ``flip_yz`` mirrors
    across the yz-plane (negates x).
    """

    scale: float = 1.0
    flip_xz: bool = False
    flip_yz: bool = False

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"TTA scale must be positive, got {self.scale}")


def default_tta_transforms() -> list[TtaTransform]:
    """The 12 combinations of the default scales and the two flips."""
    return [
        TtaTransform(scale, flip_xz, flip_yz)
        for scale in DEFAULT_TTA_SCALES
        for flip_xz, flip_yz in ((False, False), (True, False), (False, True), (True, True))
    ]


def _flip_point(x: float, y: float, t: TtaTransform) -> Point:
    if t.flip_xz:
        y = -y
    if t.flip_yz:
        x = -x
    return x, y


def _flip_yaw(yaw: float, t: TtaTransform) -> float:
    if t.flip_xz:
        yaw = -yaw
    if t.flip_yz:
        yaw = math.pi - yaw
    return yaw


def _unflip_yaw(yaw: float, t: TtaTransform) -> float:
    if t.flip_yz:
        yaw = math.pi - yaw
    if t.flip_xz:
        yaw = -yaw
    return yaw


def _apply_box(box: Box3D, t: TtaTransform) -> Box3D:
    s = t.scale
    x, y = _flip_point(box.center[0] * s, box.center[1] * s, t)
    vx, vy = _flip_point(*box.velocity, t)
    return box.replace(
        center=(x, y, box.center[2] * s),
        size=tuple(v * s for v in box.size),
        yaw=_flip_yaw(box.yaw, t),
        velocity=(vx, vy),
    )


def _invert_box(box: Box3D, t: TtaTransform) -> Box3D:
    s = t.scale
    x, y = _flip_point(box.center[0], box.center[1], t)
    vx, vy = _flip_point(*box.velocity, t)
    return box.replace(
        center=(x / s, y / s, box.center[2] / s),
        size=tuple(v / s for v in box.size),
        yaw=_unflip_yaw(box.yaw, t),
        velocity=(vx, vy),
    )


def _map_trajectory(traj: Trajectory, t: TtaTransform, inverse: bool) -> Trajectory:
    points = []
    for x, y in traj.waypoints:
        if inverse:
            x, y = _flip_point(x, y, t)
            points.append((x / t.scale, y / t.scale))
        else:
            points.append(_flip_point(x * t.scale, y * t.scale, t))
    return Trajectory(points, traj.step_period)


def _map_entry(entry: Entry, t: TtaTransform, inverse: bool) -> Entry:
    box_fn = _invert_box if inverse else _apply_box
    mapped = with_box(entry, box_fn(entry_box(entry), t))
    if isinstance(mapped, Forecast):
        modes = [(_map_trajectory(traj, t, inverse), score) for traj, score in mapped.modes]
        mapped = Forecast(mapped.detection, modes)
    return mapped


def apply_tta(fs: FrameSet, t: TtaTransform) -> FrameSet:
    """Map every entry of ``fs`` into the augmented frame."""
    frames = {key: [_map_entry(e, t, False) for e in entries] for key, entries in fs.items()}
    return FrameSet(fs.kind, frames)


def invert_tta(fs: FrameSet, t: TtaTransform) -> FrameSet:
    """Map entries produced under ``t`` back to the original frame."""
    frames = {key: [_map_entry(e, t, True) for e in entries] for key, entries in fs.items()}
    return FrameSet(fs.kind, frames)
