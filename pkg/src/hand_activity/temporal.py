"""Moving-average smoothing of per-tick hand states and the sustained
distraction alert machine."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

from .core import (
    PROB_TOL,
    Hand,
    Label,
    LocationClass,
    ObjectClass,
    PipelineConfig,
    ProbVector,
    is_distracting_object,
)
from .perception import HandState, TickResult


def mean_vector(vectors: Sequence[ProbVector]) -> ProbVector:
    """Element-wise arithmetic mean anchored on the first vector.

    Each component is ``v0 + (sum of (v - v0), left to right) / n``, which is
    exact when every vector is identical, so constant streams are fixed
    points. Renormalizes only if the mean leaves the probability tolerance.
    """
    first = vectors[0]
    if all(v.probs == first.probs for v in vectors):
        # every offset is zero, so the mean is ``first`` exactly
        return first
    n = len(vectors)
    means = []
    for column in zip(*(v.probs for v in vectors)):
        base = column[0]
        s = 0.0
        for p in column:
            s += p - base
        means.append(base + s / n)
    total = math.fsum(means)
    if abs(total - 1.0) > PROB_TOL:
        means = [m / total for m in means]
    return ProbVector(first.labels, tuple(means))


@dataclass(frozen=True)
class SmoothedHand:
    hand: Hand
    object_probs: Optional[ProbVector]
    location_probs: Optional[ProbVector]
    label: Optional[Label]


@dataclass(frozen=True)
class SmoothedState:
    tick_index: int
    timestamp: int
    left: SmoothedHand
    right: SmoothedHand


def smooth_hand(states: Sequence[HandState]) -> SmoothedHand:
    """Average the known states of one hand and re-apply the two-stage rule.

    When the averaged object vector favours ``None`` but no tick in the
    window carried a location vector, the best held object is reported.
    """
    hand = states[-1].hand
    known = [s for s in states if not s.is_unknown]
    if not known:
        return SmoothedHand(hand, None, None, None)
    obj = mean_vector([s.object_probs for s in known])
    locs = [s.location_probs for s in known if s.location_probs is not None]
    loc = mean_vector(locs) if locs else None
    top = obj.argmax()
    if top is not ObjectClass.NONE:
        label = top
    elif loc is not None:
        label = loc.argmax()
    else:
        held = [(p, i) for i, (lab, p) in enumerate(zip(obj.labels, obj.probs))
                if lab is not ObjectClass.NONE]
        label = obj.labels[max(held, key=lambda t: (t[0], -t[1]))[1]]
    return SmoothedHand(hand, obj, loc, label)


def smooth(history: Sequence[TickResult], window: int) -> SmoothedState:
    """Smoothed state for the latest tick in ``history`` over at most ``window`` ticks."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if not history:
        raise ValueError("history is empty")
    recent = history[-window:]
    last = recent[-1]
    return SmoothedState(last.tick_index, last.timestamp,
                         smooth_hand([t.left for t in recent]),
                         smooth_hand([t.right for t in recent]))


class MovingAverageSmoother:
    """Stateful wrapper around :func:`smooth`, fed in tick order."""

    def __init__(self, window: int = 3):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self._history: deque = deque(maxlen=window)

    def push(self, tick: TickResult) -> SmoothedState:
        if self._history and tick.tick_index <= self._history[-1].tick_index:
            raise ValueError("ticks must arrive in increasing tick_index order")
        self._history.append(tick)
        return smooth(list(self._history), self.window)


# -- distraction predicates ---------------------------------------------------

def default_predicate(left: Label, right: Label) -> bool:
    """Distracted when either hand holds an object or neither is on the wheel."""
    if is_distracting_object(left) or is_distracting_object(right):
        return True
    return left is not LocationClass.Wheel and right is not LocationClass.Wheel


def any_object_predicate(left: Label, right: Label) -> bool:
    return is_distracting_object(left) or is_distracting_object(right)


PREDICATES: dict[str, Callable[[Label, Label], bool]] = {
    "default": default_predicate,
    "any_object": any_object_predicate,
}


def is_distracted(state: SmoothedState, predicate: str = "default",
                  unknown_is_distracting: bool = False) -> bool:
    left, right = state.left.label, state.right.label
    if left is None or right is None:
        if unknown_is_distracting:
            return True
        # an unknown hand is given the benefit of the doubt
        left = LocationClass.Wheel if left is None else left
        right = LocationClass.Wheel if right is None else right
    return PREDICATES[predicate](left, right)


# -- alert machine --------------------------------------------------------------

class AlertState(str, Enum):
    Monitoring = "Monitoring"
    Tracking = "Tracking"
    Alerted = "Alerted"


@dataclass(frozen=True)
class AlertEvent:
    onset_tick: int
    onset_timestamp: int
    left_label: Optional[Label]
    right_label: Optional[Label]
    duration_frames: int

    def to_json(self) -> dict:
        return {
            "onset_tick": self.onset_tick,
            "onset_timestamp_us": self.onset_timestamp,
            "left_label": _label_str(self.left_label),
            "right_label": _label_str(self.right_label),
        }


def _label_str(label: Optional[Label]) -> str:
    return "Unknown" if label is None else label.value


@dataclass(frozen=True)
class AlertMachine:
    threshold: int = 150
    cooldown: int = 300
    predicate: str = "default"
    unknown_is_distracting: bool = False
    state: AlertState = AlertState.Monitoring
    consecutive_distracted: int = 0
    cooldown_remaining: int = 0

    def __post_init__(self):
        if self.threshold < 1 or self.cooldown < 1:
            raise ValueError("threshold and cooldown must be >= 1")
        if not 0 <= self.consecutive_distracted <= self.threshold:
            raise ValueError("counter out of range")
        if self.cooldown_remaining > 0 and self.state is not AlertState.Alerted:
            raise ValueError("cooldown only runs while Alerted")
        if self.predicate not in PREDICATES:
            raise ValueError(f"unknown predicate {self.predicate!r}")

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "AlertMachine":
        return cls(cfg.alert_threshold, cfg.alert_cooldown, cfg.distraction_predicate,
                   cfg.unknown_is_distracting)

    def _with(self, state: AlertState, counter: int, cooldown_remaining: int) -> "AlertMachine":
        return AlertMachine(self.threshold, self.cooldown, self.predicate,
                            self.unknown_is_distracting, state, counter, cooldown_remaining)

    def advance(self, distracted: bool) -> tuple["AlertMachine", bool]:
        """Transition on a bare distraction flag; the flag returned is True
        exactly when an alert fires on this tick."""
        if not distracted:
            return self._with(AlertState.Monitoring, 0, 0), False
        if self.state is AlertState.Alerted:
            remaining = self.cooldown_remaining - 1
            if remaining <= 0:
                return self._with(AlertState.Monitoring, 0, 0), False
            return self._with(AlertState.Alerted, self.consecutive_distracted, remaining), False
        counter = self.consecutive_distracted + 1
        if counter >= self.threshold:
            return self._with(AlertState.Alerted, self.threshold, self.cooldown), True
        return self._with(AlertState.Tracking, counter, 0), False

    def step(self, state: SmoothedState) -> tuple["AlertMachine", Optional[AlertEvent]]:
        flag = is_distracted(state, self.predicate, self.unknown_is_distracting)
        machine, fired = self.advance(flag)
        if not fired:
            return machine, None
        return machine, AlertEvent(state.tick_index, state.timestamp,
                                   state.left.label, state.right.label, self.threshold)


def step(machine: AlertMachine, state: SmoothedState) -> tuple[AlertMachine, Optional[AlertEvent]]:
    return machine.step(state)


class TemporalStage:
    """Smoother followed by the alert machine, fed one tick at a time."""

    def __init__(self, cfg: Optional[PipelineConfig] = None):
        cfg = cfg or PipelineConfig()
        self.smoother = MovingAverageSmoother(cfg.smoothing_window)
        self.machine = AlertMachine.from_config(cfg)

    def push(self, tick: TickResult) -> tuple[SmoothedState, Optional[AlertEvent]]:
        smoothed = self.smoother.push(tick)
        self.machine, event = self.machine.step(smoothed)
        return smoothed, event
