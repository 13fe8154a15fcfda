"""Multi-camera driver hand-activity pipeline with distraction alerts."""

from .core import (
    VIEWS,
    ConfigError,
    Frame,
    Hand,
    LocationClass,
    ObjectClass,
    PipelineConfig,
    ProbVector,
    SeatROI,
    ViewId,
    admissible_classes,
    load_config,
    validate_config,
)
from .perception import BoundingBox, HandCrop, HandState, PoseEstimate, classify_hand, crop_hand, process_tick, select_driver
from .sync import FrameSynchronizer, SyncedFrameSet
from .temporal import AlertEvent, AlertMachine, default_predicate, smooth, step

__version__ = "0.1.0"
