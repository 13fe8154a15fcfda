"""Mock inference backends driven by manifest ground truth.

``ScriptedBackends`` reproduces the manifest exactly; ``NoisyBackends``
replaces the true class with a uniformly chosen wrong one at a seeded rate.
Both are stateless after construction and safe for concurrent calls.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from . import rng
from .core import (
    Frame,
    Hand,
    LocationClass,
    ObjectClass,
    ProbVector,
    ViewId,
    admissible_classes,
)
from .perception import BoundingBox, HandCrop, PerceptionError, PoseEstimate

WRIST_CONFIDENCE = 0.95


@lru_cache(maxsize=None)
def load_layout() -> dict:
    """Per-view driver/passenger boxes and per-label wrist positions (normalized)."""
    path = resources.files("hand_activity") / "data" / "layout.json"
    return json.loads(path.read_text())


def _scaled_box(rect, width: int, height: int, confidence: float) -> BoundingBox:
    x0, y0, x1, y1 = rect
    return BoundingBox(x0 * width, y0 * height, x1 * width, y1 * height, confidence)


class ScriptedBackends:
    """Answers every query from the manifest record that produced the frame."""

    def __init__(self, manifest, peak: float = 0.85):
        self.manifest = manifest
        self.peak = peak
        self.layout = load_layout()
        self._index = manifest.frame_index()

    def record_for(self, view: ViewId, timestamp: int):
        idx = self._index.get((view, timestamp))
        if idx is None:
            raise PerceptionError(f"no manifest record for {view.value} @ {timestamp}")
        return self.manifest.records[idx]

    def _truth(self, hand: Hand, crops: Sequence[Optional[HandCrop]]):
        crop = next(c for c in crops if c is not None)
        rec = self.record_for(crop.view, crop.timestamp)
        if rec.truth is None:
            raise PerceptionError(f"record {rec.tick} has no ground truth")
        return rec, rec.truth[hand]

    def detect(self, frame: Frame) -> list[BoundingBox]:
        boxes = [_scaled_box(self.layout["driver_box"][frame.view.value],
                             frame.width, frame.height, 0.99)]
        passenger = self.layout["passenger_box"].get(frame.view.value)
        if passenger is not None:
            boxes.insert(0, _scaled_box(passenger, frame.width, frame.height, 0.9))
        return boxes

    def estimate_pose(self, frame: Frame, box: BoundingBox) -> PoseEstimate:
        rec = self.record_for(frame.view, frame.timestamp)
        if rec.truth is None:
            raise PerceptionError(f"record {rec.tick} has no ground truth")
        keypoints = {}
        for hand, joint in ((Hand.Left, "LeftWrist"), (Hand.Right, "RightWrist")):
            x, y = rec.truth[hand].wrist[frame.view]
            keypoints[joint] = (float(x), float(y), WRIST_CONFIDENCE)
        return PoseEstimate(keypoints)

    def object_label(self, hand: Hand, crops) -> tuple[int, ObjectClass]:
        rec, truth = self._truth(hand, crops)
        return rec.tick, truth.object

    def location_label(self, hand: Hand, crops) -> tuple[int, Optional[LocationClass]]:
        rec, truth = self._truth(hand, crops)
        return rec.tick, truth.location

    def classify_object(self, hand: Hand, crops) -> ProbVector:
        _, label = self.object_label(hand, crops)
        return ProbVector.peaked(tuple(ObjectClass), label, self.peak)

    def classify_location(self, hand: Hand, crops) -> ProbVector:
        _, label = self.location_label(hand, crops)
        return _location_vector(hand, label, self.peak)


def _location_vector(hand: Hand, label: Optional[LocationClass], peak: float) -> ProbVector:
    classes = admissible_classes(hand)
    if label is None:
        # hand is holding something per the truth; no zone to favour
        return ProbVector(classes, tuple(1.0 / len(classes) for _ in classes))
    return ProbVector.peaked(classes, label, peak)


class NoisyBackends:
    """Scripted answers with symmetric label noise.

    With probability ``rate`` (per tick, hand and stage) the true class is
    swapped for one of the remaining classes, chosen uniformly.
    """

    def __init__(self, scripted: ScriptedBackends, object_error_rate: float = 0.0,
                 location_error_rate: float = 0.0, seed: int = 0):
        for name, r in (("object_error_rate", object_error_rate),
                        ("location_error_rate", location_error_rate)):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        self.scripted = scripted
        self.object_error_rate = object_error_rate
        self.location_error_rate = location_error_rate
        self.seed = seed

    def detect(self, frame):
        return self.scripted.detect(frame)

    def estimate_pose(self, frame, box):
        return self.scripted.estimate_pose(frame, box)

    def _perturb(self, label, classes, rate, noise_stream, pick_stream, tick, hand):
        h = 0 if hand is Hand.Left else 1
        if label is None or rate <= 0.0:
            return label
        if rng.keyed_uniform(self.seed, noise_stream, tick, h) >= rate:
            return label
        others = [c for c in classes if c != label]
        return others[rng.keyed_below(len(others), self.seed, pick_stream, tick, h)]

    def classify_object(self, hand, crops) -> ProbVector:
        tick, label = self.scripted.object_label(hand, crops)
        label = self._perturb(label, tuple(ObjectClass), self.object_error_rate,
                              rng.OBJECT_NOISE, rng.OBJECT_PICK, tick, hand)
        return ProbVector.peaked(tuple(ObjectClass), label, self.scripted.peak)

    def classify_location(self, hand, crops) -> ProbVector:
        tick, label = self.scripted.location_label(hand, crops)
        label = self._perturb(label, admissible_classes(hand), self.location_error_rate,
                              rng.LOCATION_NOISE, rng.LOCATION_PICK, tick, hand)
        return _location_vector(hand, label, self.scripted.peak)
