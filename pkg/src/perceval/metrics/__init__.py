"""Detection, tracking and forecasting evaluation."""

from .assignment import gated_assignment, hungarian
from .base import MatchConfig, MetricReport, interpolated_ap
from .detection import detection_metrics
from .forecasting import COHORTS, classify_motion, forecasting_metrics
from .tracking import HotaResult, amota, hota, mota, tracking_metrics

__all__ = [
    "COHORTS",
    "HotaResult",
    "MatchConfig",
    "MetricReport",
    "amota",
    "classify_motion",
    "detection_metrics",
    "forecasting_metrics",
    "gated_assignment",
    "hota",
    "hungarian",
    "interpolated_ap",
    "mota",
    "tracking_metrics",
]
