"""Post-processing, ensembling and evaluation for joint 3D detection,
tracking and motion forecasting."""

__version__ = "0.1.0"

from .core import (
    Box3D,
    CategoryRegistry,
    Forecast,
    FrameKey,
    FrameSet,
    FrameSetError,
    TrackedBox,
    Trajectory,
    read_frameset,
    validate_frameset,
    write_frameset,
)
from .ensemble import EnsembleConfig, ModelOutput, ensemble_forecasts, tta_merge, wbf
from .geometry import TtaTransform, apply_tta, bev_iou, center_distance, invert_tta, nms, yaw_error

__all__ = [
    "Box3D",
    "CategoryRegistry",
    "EnsembleConfig",
    "Forecast",
    "FrameKey",
    "FrameSet",
    "FrameSetError",
    "ModelOutput",
    "TrackedBox",
    "Trajectory",
    "TtaTransform",
    "apply_tta",
    "bev_iou",
    "center_distance",
    "ensemble_forecasts",
    "invert_tta",
    "nms",
    "read_frameset",
    "tta_merge",
    "validate_frameset",
    "wbf",
    "write_frameset",
    "yaw_error",
]
