"""Shared domain types, label taxonomies and pipeline configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

PROB_TOL = 1e-6


class HandActivityError(Exception):
    """Base class for all package errors."""


class ConfigError(HandActivityError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ViewId(str, Enum):
    """Camera views in fusion-input order."""

    WheelCam = "WheelCam"
    DashDriverCam = "DashDriverCam"
    DashCenterCam = "DashCenterCam"
    MirrorCam = "MirrorCam"


VIEWS: tuple[ViewId, ...] = tuple(ViewId)


class Hand(str, Enum):
    Left = "Left"
    Right = "Right"


class ObjectClass(str, Enum):
    NONE = "None"
    Beverage = "Beverage"
    Phone = "Phone"
    Tablet = "Tablet"


class LocationClass(str, Enum):
    Wheel = "Wheel"
    Lap = "Lap"
    Air = "Air"
    Radio = "Radio"
    Cupholder = "Cupholder"


Label = Union[ObjectClass, LocationClass]

_LEFT_ZONES = (LocationClass.Wheel, LocationClass.Lap, LocationClass.Air)


def admissible_classes(hand: Hand) -> tuple[LocationClass, ...]:
    """Location zones a hand can be classified into, in enumeration order."""
    if Hand(hand) is Hand.Left:
        return _LEFT_ZONES
    return tuple(LocationClass)


def parse_label(text: str) -> Label:
    """Parse a final activity label: a held object (not None) or a location."""
    try:
        obj = ObjectClass(text)
    except ValueError:
        obj = None
    if obj is not None:
        if obj is ObjectClass.NONE:
            raise ValueError("'None' is not a final label; give a location instead")
        return obj
    try:
        return LocationClass(text)
    except ValueError:
        raise ValueError(f"unknown label {text!r}") from None


def is_distracting_object(label: Optional[Label]) -> bool:
    return isinstance(label, ObjectClass) and label is not ObjectClass.NONE


@dataclass(frozen=True)
class Frame:
    """A single-view IR image.

    ``pixels`` may be omitted for synthetic replay, where only geometry and
    labels travel through the pipeline.
    """

    view: ViewId
    timestamp: int  # microseconds since stream epoch
    width: int
    height: int
    pixels: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame dimensions must be positive, got {self.width}x{self.height}")
        if not isinstance(self.timestamp, (int, np.integer)):
            raise TypeError("timestamp must be integer microseconds")
        if self.pixels is not None:
            if self.pixels.dtype != np.uint8 or self.pixels.shape != (self.height, self.width):
                raise ValueError(
                    f"pixels must be uint8 of shape {(self.height, self.width)}, "
                    f"got {self.pixels.dtype} {self.pixels.shape}"
                )


@dataclass(frozen=True)
class ProbVector:
    """Ordered class distribution. Argmax ties resolve to the earliest label."""

    labels: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.labels) != len(self.probs) or not self.labels:
            raise ValueError("labels and probs must be non-empty and of equal length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels")
        for p in self.probs:
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ValueError(f"probability out of range: {p}")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @classmethod
    def from_mapping(cls, labels: Sequence, values: Mapping) -> "ProbVector":
        return cls(tuple(labels), tuple(float(values.get(lab, 0.0)) for lab in labels))

    @classmethod
    def peaked(cls, labels: Sequence, target, peak: float = 0.85) -> "ProbVector":
        """``peak`` on ``target``, the remainder spread evenly over the others."""
        labels = tuple(labels)
        if len(labels) == 1:
            return cls(labels, (1.0,))
        rest = (1.0 - peak) / (len(labels) - 1)
        return cls(labels, tuple(peak if lab == target else rest for lab in labels))

    def argmax(self):
        best = 0
        for i, p in enumerate(self.probs):
            if p > self.probs[best]:
                best = i
        return self.labels[best]

    def __getitem__(self, label) -> float:
        return self.probs[self.labels.index(label)]

    def as_dict(self) -> dict[str, float]:
        return {lab.value: p for lab, p in zip(self.labels, self.probs)}


@dataclass(frozen=True)
class SeatROI:
    """Normalized rectangle (fractions of frame width/height) around the driver's seat."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min < self.x_max <= 1.0 and 0.0 <= self.y_min < self.y_max <= 1.0):
            raise ValueError(f"invalid seat ROI {self}")

    def contains(self, x: float, y: float, width: int, height: int) -> bool:
        return (self.x_min * width <= x <= self.x_max * width
                and self.y_min * height <= y <= self.y_max * height)


DEFAULT_SEAT_ROI: dict[ViewId, SeatROI] = {
    ViewId.WheelCam: SeatROI(0.0, 0.0, 1.0, 1.0),
    ViewId.DashDriverCam: SeatROI(0.0, 0.0, 1.0, 1.0),
    ViewId.DashCenterCam: SeatROI(0.45, 0.0, 1.0, 1.0),
    ViewId.MirrorCam: SeatROI(0.5, 0.0, 1.0, 1.0),
}

DISTRACTION_PREDICATES = ("default", "any_object")


@dataclass(frozen=True)
class PipelineConfig:
    crop_radius_px: Mapping[ViewId, int] = field(default_factory=lambda: {v: 100 for v in VIEWS})
    sync_tolerance_us: int = 16_667
    smoothing_window: int = 3
    alert_threshold: int = 150
    nominal_fps: float = 30.0
    alert_cooldown: int = 300
    distraction_predicate: str = "default"
    min_wrist_conf: float = 0.3
    sync_buffer_cap: int = 8
    sync_timeout_periods: float = 2.0
    unknown_is_distracting: bool = False
    seat_roi: Mapping[ViewId, SeatROI] = field(default_factory=lambda: dict(DEFAULT_SEAT_ROI))

    @property
    def frame_period_us(self) -> int:
        return round(1_000_000 / self.nominal_fps)


def validate_config(cfg: PipelineConfig) -> PipelineConfig:
    """Return ``cfg`` unchanged if every field is in range, else raise ConfigError."""
    if set(cfg.crop_radius_px) != set(VIEWS):
        raise ConfigError("crop_radius_px", "must give a radius for every view")
    for view, r in cfg.crop_radius_px.items():
        if not isinstance(r, int) or r <= 0:
            raise ConfigError("crop_radius_px", f"radius for {view.value} must be a positive integer")
    positive_ints = ("sync_tolerance_us", "smoothing_window", "alert_threshold",
                     "alert_cooldown", "sync_buffer_cap")
    for name in positive_ints:
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(name, f"must be a positive integer, got {value!r}")
    if not cfg.nominal_fps > 0:
        raise ConfigError("nominal_fps", "must be positive")
    if not cfg.sync_timeout_periods > 0:
        raise ConfigError("sync_timeout_periods", "must be positive")
    if not 0.0 <= cfg.min_wrist_conf <= 1.0:
        raise ConfigError("min_wrist_conf", "must lie in [0, 1]")
    if cfg.distraction_predicate not in DISTRACTION_PREDICATES:
        raise ConfigError("distraction_predicate", f"unknown predicate {cfg.distraction_predicate!r}")
    if set(cfg.seat_roi) != set(VIEWS):
        raise ConfigError("seat_roi", "must give a seat ROI for every view")
    return cfg


_SCALAR_FIELDS = {f.name for f in fields(PipelineConfig)} - {"crop_radius_px", "seat_roi"}


def config_from_mapping(values: Mapping[str, Any], base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Build a validated config from flat key/value pairs layered over ``base``."""
    base = base or PipelineConfig()
    updates: dict[str, Any] = {}
    for key, value in values.items():
        if value is None:
            continue
        if key == "crop_radius_px":
            if isinstance(value, Mapping):
                radii = dict(base.crop_radius_px)
                for view, r in value.items():
                    radii[_view(view, key)] = r
                updates[key] = radii
            else:
                updates[key] = {v: value for v in VIEWS}
        elif key == "seat_roi":
            if not isinstance(value, Mapping):
                raise ConfigError(key, "expected a table of view = [x_min, y_min, x_max, y_max]")
            rois = dict(base.seat_roi)
            for view, rect in value.items():
                try:
                    rois[_view(view, key)] = SeatROI(*(float(c) for c in rect))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(key, f"{view}: {exc}") from None
            updates[key] = rois
        elif key in _SCALAR_FIELDS:
            updates[key] = value
        else:
            raise ConfigError(key, "unknown configuration key")
    return validate_config(replace(base, **updates))


def _view(name: str, field_name: str) -> ViewId:
    try:
        return ViewId(name)
    except ValueError:
        raise ConfigError(field_name, f"unknown view {name!r}") from None


def load_config(path: Union[str, Path, None], overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Read a TOML config file (if given) and apply ``overrides`` on top."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), str(exc)) from None
        cfg = config_from_mapping(data, cfg)
    if overrides:
        cfg = config_from_mapping(overrides, cfg)
    return validate_config(cfg)
