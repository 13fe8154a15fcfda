"""Alignment of four independently timestamped camera streams into tick bundles.

Emission rules, applied repeatedly after every ingest:

* the *anchor* is the earliest buffered frame across all views;
* a view is *resolved* for the anchor when its buffer head lies within the
  sync tolerance of the anchor (present) or beyond it (known missing, since
  per-view timestamps never regress);
* a set is emitted once every view is resolved, or once the stream clock
  (latest timestamp ingested) is ``timeout_us`` or more past the anchor.

A frame whose timestamp is not after ``last reference + tolerance`` can no
longer join any set and is counted as dropped-late; a frame repeating its
view's previous timestamp is counted as dropped-duplicate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

from .core import VIEWS, Frame, PipelineConfig, HandActivityError, ViewId


class OutOfOrderFrame(HandActivityError):
    pass


class BufferOverflow(HandActivityError):
    pass


@dataclass(frozen=True)
class SyncedFrameSet:
    tick_index: int
    reference_timestamp: int
    frames: Mapping[ViewId, Optional[Frame]]
    missing: frozenset

    def present(self) -> list[Frame]:
        return [f for f in self.frames.values() if f is not None]


@dataclass(frozen=True)
class ViewCounts:
    accepted: int = 0
    dropped_late: int = 0
    dropped_duplicate: int = 0

    @property
    def total(self) -> int:
        return self.accepted + self.dropped_late + self.dropped_duplicate


@dataclass(frozen=True)
class StreamStats:
    views: Mapping[ViewId, ViewCounts] = field(
        default_factory=lambda: {v: ViewCounts() for v in VIEWS})

    def as_dict(self) -> dict:
        return {v.value: {"accepted": c.accepted, "dropped_late": c.dropped_late,
                          "dropped_duplicate": c.dropped_duplicate}
                for v, c in self.views.items()}


class FrameSynchronizer:
    """Single-writer synchronizer; callers serialize ``ingest``."""

    def __init__(self, tolerance_us: int = 16_667, timeout_us: int = 66_666,
                 buffer_cap: int = 8):
        if tolerance_us < 0 or timeout_us <= 0 or buffer_cap < 1:
            raise ValueError("tolerance must be >= 0, timeout and buffer cap > 0")
        self.tolerance_us = tolerance_us
        self.timeout_us = timeout_us
        self.buffer_cap = buffer_cap
        self._buffers: dict[ViewId, deque] = {v: deque() for v in VIEWS}
        self._last_ts: dict[ViewId, Optional[int]] = {v: None for v in VIEWS}
        self._counts = {v: [0, 0, 0] for v in VIEWS}  # accepted, late, duplicate
        self._clock: Optional[int] = None
        self._last_ref: Optional[int] = None
        self._next_tick = 0

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "FrameSynchronizer":
        return cls(tolerance_us=cfg.sync_tolerance_us,
                   timeout_us=round(cfg.sync_timeout_periods * cfg.frame_period_us),
                   buffer_cap=cfg.sync_buffer_cap)

    def ingest(self, frame: Frame) -> list[SyncedFrameSet]:
        view = ViewId(frame.view)
        ts = int(frame.timestamp)
        last = self._last_ts[view]
        if last is not None and ts < last:
            raise OutOfOrderFrame(f"{view.value}: timestamp {ts} < previous {last}")
        counts = self._counts[view]
        if last is not None and ts == last:
            counts[2] += 1
            return []
        self._last_ts[view] = ts
        if self._last_ref is not None and ts <= self._last_ref + self.tolerance_us:
            counts[1] += 1
            return []
        buf = self._buffers[view]
        if len(buf) >= self.buffer_cap:
            raise BufferOverflow(f"{view.value}: buffer cap {self.buffer_cap} exceeded")
        buf.append(frame)
        counts[0] += 1
        if self._clock is None or ts > self._clock:
            self._clock = ts
        return self._drain(force=False)

    def flush(self) -> list[SyncedFrameSet]:
        """Emit everything still buffered (end of stream)."""
        return self._drain(force=True)

    def stats(self) -> StreamStats:
        return StreamStats({v: ViewCounts(*c) for v, c in self._counts.items()})

    def _drain(self, force: bool) -> list[SyncedFrameSet]:
        out = []
        while True:
            heads = [buf[0].timestamp for buf in self._buffers.values() if buf]
            if not heads:
                return out
            anchor = min(heads)
            limit = anchor + self.tolerance_us
            # a non-empty buffer resolves its view either way (present or beyond limit)
            resolved = all(self._buffers.values())
            timed_out = self._clock - anchor >= self.timeout_us
            if not (resolved or timed_out or force):
                return out
            out.append(self._emit(anchor, limit))

    def _emit(self, anchor: int, limit: int) -> SyncedFrameSet:
        frames: dict[ViewId, Optional[Frame]] = {}
        for view, buf in self._buffers.items():
            if buf and buf[0].timestamp <= limit:
                frames[view] = buf.popleft()
            else:
                frames[view] = None
        missing = frozenset(v for v, f in frames.items() if f is None)
        out = SyncedFrameSet(self._next_tick, anchor, MappingProxyType(frames), missing)
        self._next_tick += 1
        self._last_ref = anchor
        return out
