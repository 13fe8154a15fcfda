"""Per-tick perception: driver selection, wrist-centred hand crops and the
two-stage (held object, then location) hand classification.

Network internals live behind :class:`InferenceBackends`; this module only
fixes their input/output contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from .core import (
    VIEWS,
    DEFAULT_SEAT_ROI,
    Frame,
    Hand,
    Label,
    ObjectClass,
    PipelineConfig,
    ProbVector,
    SeatROI,
    HandActivityError,
    ViewId,
    admissible_classes,
)
from .sync import SyncedFrameSet

__all__ = [
    "BoundingBox", "PoseEstimate", "SeatROI", "HandCrop", "HandState", "TickResult",
    "InferenceBackends", "NoDriverDetected", "NoValidCrop", "BackendContractError",
    "select_driver", "crop_hand", "crop_bounds", "classify_hand", "process_tick",
]

LEFT_WRIST = "LeftWrist"
RIGHT_WRIST = "RightWrist"
WRIST_JOINT = {Hand.Left: LEFT_WRIST, Hand.Right: RIGHT_WRIST}


class PerceptionError(HandActivityError):
    pass


class NoDriverDetected(PerceptionError):
    pass


class NoValidCrop(PerceptionError):
    pass


class BackendContractError(PerceptionError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2

    def clamped(self, width: int, height: int) -> "BoundingBox":
        return BoundingBox(max(0.0, self.x_min), max(0.0, self.y_min),
                           min(float(width), self.x_max), min(float(height), self.y_max),
                           self.confidence)


@dataclass(frozen=True)
class PoseEstimate:
    """Named 2-D keypoints, each ``(x, y, confidence)``."""

    keypoints: Mapping[str, tuple[float, float, float]]

    def __post_init__(self):
        for name in (LEFT_WRIST, RIGHT_WRIST):
            if name not in self.keypoints:
                raise ValueError(f"pose is missing {name}")
        for name, (x, y, c) in self.keypoints.items():
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"{name}: non-finite coordinates")
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"{name}: confidence {c} out of range")

    def wrist(self, hand: Hand) -> tuple[float, float, float]:
        return self.keypoints[WRIST_JOINT[hand]]


@dataclass(frozen=True)
class HandCrop:
    """Crop around one wrist in one view.

    ``box`` uses half-open pixel ranges: columns ``[x_min, x_max)`` and rows
    ``[y_min, y_max)``. ``pixels`` is only populated when the source frame
    carried an image.
    """

    view: ViewId
    hand: Hand
    timestamp: int
    box: Optional[BoundingBox]
    valid: bool
    pixels: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class HandState:
    """Classification of one hand for one tick; ``label is None`` means Unknown."""

    hand: Hand
    object_probs: Optional[ProbVector]
    location_probs: Optional[ProbVector] = None
    label: Optional[Label] = None

    @classmethod
    def unknown(cls, hand: Hand) -> "HandState":
        return cls(hand, None, None, None)

    @property
    def is_unknown(self) -> bool:
        return self.label is None


class InferenceBackends(Protocol):
    """Model boundary. Classifier crop sequences hold one optional crop per
    view, in ``VIEWS`` order; absent or invalid views are ``None``."""

    def detect(self, frame: Frame) -> list[BoundingBox]: ...

    def estimate_pose(self, frame: Frame, box: BoundingBox) -> PoseEstimate: ...

    def classify_object(self, hand: Hand, crops: Sequence[Optional[HandCrop]]) -> ProbVector: ...

    def classify_location(self, hand: Hand, crops: Sequence[Optional[HandCrop]]) -> ProbVector: ...


def select_driver(detections: Sequence[BoundingBox], roi: SeatROI,
                  width: int, height: int) -> BoundingBox:
    """Pick the detection centred in the driver's seat region.

    Several candidates: largest area wins, then lowest index.
    """
    best = None
    for box in detections:
        if roi.contains(*box.center, width, height):
            if best is None or box.area > best.area:
                best = box
    if best is None:
        raise NoDriverDetected(f"none of {len(detections)} detections lies in the seat region")
    return best


def _nearest_int(v: float) -> int:
    return int(math.floor(v + 0.5))


def crop_bounds(wx: float, wy: float, radius: int, width: int, height: int
                ) -> Optional[tuple[int, int, int, int]]:
    """Square ``[c - r, c + r)`` on each axis around the rounded wrist,
    intersected with the frame. ``None`` if the intersection is empty."""
    cx, cy = _nearest_int(wx), _nearest_int(wy)
    x0, y0 = max(0, cx - radius), max(0, cy - radius)
    x1, y1 = min(width, cx + radius), min(height, cy + radius)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, y0, x1, y1


def crop_hand(pose: PoseEstimate, hand: Hand, frame: Frame, radius: int,
              min_conf: float = 0.3) -> HandCrop:
    if radius <= 0:
        raise ValueError("radius must be positive")
    wx, wy, conf = pose.wrist(hand)
    bounds = crop_bounds(wx, wy, radius, frame.width, frame.height) if conf >= min_conf else None
    if bounds is None:
        return HandCrop(frame.view, hand, frame.timestamp, None, False)
    x0, y0, x1, y1 = bounds
    pixels = None if frame.pixels is None else frame.pixels[y0:y1, x0:x1]
    return HandCrop(frame.view, hand, frame.timestamp,
                    BoundingBox(x0, y0, x1, y1, conf), True, pixels)


def _check_vector(vec: ProbVector, expected: tuple, what: str) -> ProbVector:
    if not isinstance(vec, ProbVector) or tuple(vec.labels) != expected:
        raise BackendContractError(f"{what} must be a ProbVector over {[e.value for e in expected]}")
    return vec


def _crop_sequence(crops) -> list[Optional[HandCrop]]:
    if isinstance(crops, Mapping):
        seq = [crops.get(v) for v in VIEWS]
    else:
        seq = list(crops)
        if len(seq) != len(VIEWS):
            raise ValueError(f"expected {len(VIEWS)} crops, got {len(seq)}")
    return [c if c is not None and c.valid else None for c in seq]


def classify_hand(hand: Hand, crops, backends: InferenceBackends) -> HandState:
    """Held-object pass first; a ``None`` object triggers the location pass.

    ``crops`` is a per-view mapping or a sequence in ``VIEWS`` order.
    """
    seq = _crop_sequence(crops)
    if not any(seq):
        raise NoValidCrop(f"{hand.value} hand: no valid crop in any view")
    obj = _check_vector(backends.classify_object(hand, seq), tuple(ObjectClass), "object output")
    top = obj.argmax()
    if top is not ObjectClass.NONE:
        return HandState(hand, obj, None, top)
    loc = _check_vector(backends.classify_location(hand, seq), admissible_classes(hand),
                        "location output")
    return HandState(hand, obj, loc, loc.argmax())


@dataclass(frozen=True)
class TickResult:
    tick_index: int
    timestamp: int
    left: HandState
    right: HandState
    diagnostics: Mapping[ViewId, tuple[str, ...]]

    def hand(self, hand: Hand) -> HandState:
        return self.left if hand is Hand.Left else self.right


def process_tick(frame_set: SyncedFrameSet, backends: InferenceBackends,
                 cfg: Optional[PipelineConfig] = None,
                 roi: Optional[Mapping[ViewId, SeatROI]] = None) -> TickResult:
    """Detect, select the driver, estimate pose and crop both hands in every
    present view, then classify each hand over the fused crops."""
    cfg = cfg or PipelineConfig()
    roi = roi or cfg.seat_roi or DEFAULT_SEAT_ROI
    crops: dict[Hand, dict[ViewId, Optional[HandCrop]]] = {Hand.Left: {}, Hand.Right: {}}
    diagnostics: dict[ViewId, list[str]] = {v: [] for v in VIEWS}
    for view in VIEWS:
        frame = frame_set.frames.get(view)
        if frame is None:
            diagnostics[view].append("Missing")
            continue
        try:
            driver = select_driver(backends.detect(frame), roi[view], frame.width, frame.height)
            pose = backends.estimate_pose(frame, driver.clamped(frame.width, frame.height))
        except NoDriverDetected:
            diagnostics[view].append("NoDriverDetected")
            continue
        except (PerceptionError, ValueError) as exc:
            diagnostics[view].append(f"PoseFailed: {exc}")
            continue
        for hand in Hand:
            crop = crop_hand(pose, hand, frame, cfg.crop_radius_px[view], cfg.min_wrist_conf)
            if not crop.valid:
                diagnostics[view].append(f"InvalidCrop:{hand.value}")
            crops[hand][view] = crop

    states = {}
    for hand in Hand:
        try:
            states[hand] = classify_hand(hand, crops[hand], backends)
        except NoValidCrop:
            states[hand] = HandState.unknown(hand)
    return TickResult(frame_set.tick_index, frame_set.reference_timestamp,
                      states[Hand.Left], states[Hand.Right],
                      {v: tuple(d) for v, d in diagnostics.items()})
