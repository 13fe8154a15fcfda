"""Synthetic scenario generation and end-to-end replay.

Manifest files are JSON Lines: a header object, then one record per tick::

    {"schema_version": 1, "kind": "manifest", "views": [...], "fps": 30.0,
     "resolution": {"WheelCam": [640, 480], ...}}
    {"tick": 0, "timestamps": {"WheelCam": 0, ..., "MirrorCam": null},
     "truth": {"Left": {"object": "None", "location": "Wheel",
                        "wrist": {"WheelCam": [x, y], ...}}, "Right": {...}},
     "images": null}

Scenario scripts are JSON Lines as well: an optional header line without a
``frames`` key (``fps``, ``resolution``, ``seed``), then one segment per line::

    {"frames": 300, "left": "Wheel", "right": "Phone",
     "drop": {"MirrorCam": 0.1}, "jitter_us": 2000, "seed": 7}
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Union

from . import rng
from .backends import NoisyBackends, ScriptedBackends, load_layout
from .core import (
    VIEWS,
    Frame,
    Hand,
    Label,
    LocationClass,
    ObjectClass,
    PipelineConfig,
    HandActivityError,
    ViewId,
    admissible_classes,
    parse_label,
    validate_config,
)
from .evaluation import ConfusionMatrix, accuracy
from .perception import HandState, InferenceBackends, process_tick
from .sync import FrameSynchronizer, SyncedFrameSet
from .temporal import AlertEvent, TemporalStage

SCHEMA_VERSION = 1
DEFAULT_RESOLUTION = (640, 480)


class ManifestError(HandActivityError):
    def __init__(self, index: int, message: str):
        super().__init__(f"record {index}: {message}")
        self.index = index


class ScriptError(HandActivityError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


# -- manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class HandTruth:
    object: ObjectClass
    location: Optional[LocationClass]
    wrist: Mapping[ViewId, tuple[float, float]]

    @property
    def label(self) -> Label:
        return self.location if self.object is ObjectClass.NONE else self.object


@dataclass(frozen=True)
class TickRecord:
    tick: int
    timestamps: Mapping[ViewId, Optional[int]]
    truth: Optional[Mapping[Hand, HandTruth]] = None
    images: Optional[Mapping[str, str]] = None


@dataclass(frozen=True)
class ManifestHeader:
    fps: float = 30.0
    resolution: Mapping[ViewId, tuple[int, int]] = field(
        default_factory=lambda: {v: DEFAULT_RESOLUTION for v in VIEWS})
    views: tuple[ViewId, ...] = VIEWS


@dataclass
class Manifest:
    header: ManifestHeader
    records: list[TickRecord]

    def frame_index(self) -> dict[tuple[ViewId, int], int]:
        index = {}
        for i, rec in enumerate(self.records):
            for view, ts in rec.timestamps.items():
                if ts is not None:
                    index.setdefault((view, ts), i)
        return index

    def validate(self) -> "Manifest":
        last: dict[ViewId, int] = {}
        for i, rec in enumerate(self.records):
            for view, ts in rec.timestamps.items():
                if ts is None:
                    continue
                if view in last and ts < last[view]:
                    raise ManifestError(i, f"{view.value} timestamp {ts} regresses")
                last[view] = ts
            if rec.truth is None:
                continue
            for hand, truth in rec.truth.items():
                if truth.object is ObjectClass.NONE:
                    if truth.location is None:
                        raise ManifestError(i, f"{hand.value}: empty hand needs a location")
                    if truth.location not in admissible_classes(hand):
                        raise ManifestError(i, f"{hand.value}: location {truth.location.value} "
                                               "not admissible")
                for view, (x, y) in truth.wrist.items():
                    w, h = self.header.resolution[view]
                    if not (0 <= x < w and 0 <= y < h):
                        raise ManifestError(i, f"{hand.value} wrist outside {view.value} frame")
            if set(rec.truth) != set(Hand):
                raise ManifestError(i, "truth must cover both hands")
        return self

    # serialization

    def header_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "manifest",
            "views": [v.value for v in self.header.views],
            "fps": self.header.fps,
            "resolution": {v.value: list(r) for v, r in self.header.resolution.items()},
        }

    def lines(self) -> Iterable[str]:
        yield json.dumps(self.header_json(), separators=(",", ":"))
        for rec in self.records:
            yield json.dumps(_record_json(rec), separators=(",", ":"))

    def dump(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Manifest":
        with open(path) as fh:
            return cls.parse(fh)

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "Manifest":
        header = None
        records = []
        for lineno, line in enumerate(lines):
            if not line.strip():
                continue
            index = lineno - 1  # record index; -1 is the header
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(index, f"invalid JSON: {exc}") from None
            try:
                if header is None:
                    header = _parse_header(obj)
                else:
                    records.append(_parse_record(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(index, f"malformed: {exc!r}") from None
        if header is None:
            raise ManifestError(-1, "missing header")
        return cls(header, records).validate()


def _label_str(label) -> Optional[str]:
    return None if label is None else label.value


def _record_json(rec: TickRecord) -> dict:
    truth = None
    if rec.truth is not None:
        truth = {
            hand.value: {
                "object": t.object.value,
                "location": _label_str(t.location),
                "wrist": {v.value: list(xy) for v, xy in t.wrist.items()},
            }
            for hand, t in rec.truth.items()
        }
    return {
        "tick": rec.tick,
        "timestamps": {v.value: ts for v, ts in rec.timestamps.items()},
        "truth": truth,
        "images": None if rec.images is None else dict(rec.images),
    }


def _parse_header(obj: dict) -> ManifestHeader:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {obj.get('schema_version')!r}")
    views = tuple(ViewId(v) for v in obj["views"])
    if views != VIEWS:
        raise ValueError("views must list all four cameras in fusion order")
    resolution = {ViewId(v): (int(r[0]), int(r[1])) for v, r in obj["resolution"].items()}
    if set(resolution) != set(VIEWS) or any(w <= 0 or h <= 0 for w, h in resolution.values()):
        raise ValueError("resolution must give positive sizes for every view")
    fps = float(obj["fps"])
    if fps <= 0:
        raise ValueError("fps must be positive")
    return ManifestHeader(fps, resolution, views)


def _parse_record(obj: dict) -> TickRecord:
    timestamps = {}
    for v in VIEWS:
        ts = obj["timestamps"].get(v.value)
        if ts is not None and (not isinstance(ts, int) or ts < 0):
            raise ValueError(f"timestamp for {v.value} must be a non-negative integer")
        timestamps[v] = ts
    truth = None
    if obj.get("truth") is not None:
        truth = {}
        for hand in Hand:
            t = obj["truth"][hand.value]
            loc = t.get("location")
            truth[hand] = HandTruth(
                ObjectClass(t["object"]),
                None if loc is None else LocationClass(loc),
                {ViewId(v): (float(xy[0]), float(xy[1])) for v, xy in t["wrist"].items()},
            )
    return TickRecord(int(obj["tick"]), timestamps, truth, obj.get("images"))


# -- scenario scripts -----------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    frames: int
    left: Label
    right: Label
    drop: Mapping[ViewId, float] = field(default_factory=dict)
    jitter_us: int = 0
    seed: Optional[int] = None


@dataclass(frozen=True)
class ScenarioScript:
    segments: tuple[Segment, ...]
    fps: float = 30.0
    resolution: Mapping[ViewId, tuple[int, int]] = field(
        default_factory=lambda: {v: DEFAULT_RESOLUTION for v in VIEWS})
    seed: int = 0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("script has no segments")
        period = 1_000_000 / self.fps
        for i, seg in enumerate(self.segments):
            _check_segment(seg, period, i)


def _check_segment(seg: Segment, period: float, i: int) -> None:
    if seg.frames <= 0:
        raise ValueError(f"segment {i}: frames must be positive")
    for view, p in seg.drop.items():
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"segment {i}: drop probability for {view.value} outside [0, 1]")
    if seg.jitter_us < 0 or 2 * seg.jitter_us >= period:
        raise ValueError(f"segment {i}: jitter must be in [0, half a frame period)")
    if isinstance(seg.left, LocationClass) and seg.left not in admissible_classes(Hand.Left):
        raise ValueError(f"segment {i}: left hand cannot be at {seg.left.value}")


def parse_script(text: str, seed: Optional[int] = None) -> ScenarioScript:
    """Parse a JSON Lines scenario script; ``seed`` overrides the header seed."""
    options: dict = {}
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            obj = json.loads(stripped)
            if not isinstance(obj, dict):
                raise ValueError("expected a JSON object")
            if "frames" not in obj:
                if segments or options:
                    raise ValueError("header must come first and appear once")
                options = _script_options(obj)
                continue
            seg = Segment(
                frames=_int(obj["frames"], "frames"),
                left=parse_label(obj["left"]),
                right=parse_label(obj["right"]),
                drop={ViewId(v): float(p) for v, p in obj.get("drop", {}).items()},
                jitter_us=_int(obj.get("jitter_us", 0), "jitter_us"),
                seed=None if obj.get("seed") is None else _int(obj["seed"], "seed"),
            )
            _check_segment(seg, 1_000_000 / options.get("fps", 30.0), len(segments))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ScriptError(lineno, str(exc) if not isinstance(exc, KeyError)
                              else f"missing field {exc}") from None
        segments.append(seg)
    if not segments:
        raise ScriptError(0, "script has no segments")
    if seed is not None:
        options["seed"] = seed
    return ScenarioScript(tuple(segments), **options)


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer")
    return value


def _script_options(obj: dict) -> dict:
    unknown = set(obj) - {"fps", "resolution", "seed"}
    if unknown:
        raise ValueError(f"unknown header keys {sorted(unknown)}")
    options = {}
    if "fps" in obj:
        options["fps"] = float(obj["fps"])
        if options["fps"] <= 0:
            raise ValueError("fps must be positive")
    if "resolution" in obj:
        res = obj["resolution"]
        if isinstance(res, list):
            options["resolution"] = {v: (int(res[0]), int(res[1])) for v in VIEWS}
        else:
            options["resolution"] = {v: (int(res[v.value][0]), int(res[v.value][1])) for v in VIEWS}
    if "seed" in obj:
        options["seed"] = _int(obj["seed"], "seed")
    return options


def _wrist_table(label: Label, hand: Hand, resolution) -> dict[ViewId, tuple[float, float]]:
    table = load_layout()["wrist"][label.value][hand.value]
    out = {}
    for view in VIEWS:
        w, h = resolution[view]
        fx, fy = table[view.value]
        out[view] = (round(fx * w, 2), round(fy * h, 2))
    return out


def _hand_truth(label: Label, hand: Hand, resolution) -> HandTruth:
    if isinstance(label, ObjectClass):
        return HandTruth(label, None, _wrist_table(label, hand, resolution))
    return HandTruth(ObjectClass.NONE, label, _wrist_table(label, hand, resolution))


def generate(script: ScenarioScript) -> Manifest:
    """Deterministic manifest for a scenario script.

    Tick ``t`` of view ``k`` is dropped when ``u(DROP, t, k) < p`` and
    otherwise stamped ``round(t * 1e6 / fps) + jitter`` with jitter an
    integer uniform in ``[-J, J]`` drawn from ``u(JITTER, t, k)``.
    """
    records = []
    last_ts: dict[ViewId, int] = {}
    tick = 0
    for seg in script.segments:
        seed = script.seed if seg.seed is None else seg.seed
        truth = {hand: _hand_truth(lab, hand, script.resolution)
                 for hand, lab in ((Hand.Left, seg.left), (Hand.Right, seg.right))}
        for _ in range(seg.frames):
            nominal = round(tick * 1_000_000 / script.fps)
            stamps: dict[ViewId, Optional[int]] = {}
            for k, view in enumerate(VIEWS):
                p = seg.drop.get(view, 0.0)
                if p > 0.0 and rng.keyed_uniform(seed, rng.DROP, tick, k) < p:
                    stamps[view] = None
                    continue
                offset = 0
                if seg.jitter_us:
                    offset = rng.keyed_below(2 * seg.jitter_us + 1, seed, rng.JITTER, tick, k) \
                        - seg.jitter_us
                ts = max(0, nominal + offset)
                if view in last_ts and ts <= last_ts[view]:
                    ts = last_ts[view] + 1
                last_ts[view] = ts
                stamps[view] = ts
            records.append(TickRecord(tick, stamps, truth))
            tick += 1
    return Manifest(ManifestHeader(script.fps, dict(script.resolution)), records)


# -- replay ------------------------------------------------------------------

TASKS = ("left_object", "right_object", "left_location", "right_location")


@dataclass(frozen=True)
class BackendSpec:
    kind: str = "scripted"  # "scripted" | "noisy"
    object_error_rate: float = 0.0
    location_error_rate: float = 0.0
    seed: int = 0
    peak: float = 0.85

    def build(self, manifest: Manifest) -> InferenceBackends:
        scripted = ScriptedBackends(manifest, self.peak)
        if self.kind == "scripted":
            return scripted
        if self.kind == "noisy":
            return NoisyBackends(scripted, self.object_error_rate,
                                 self.location_error_rate, self.seed)
        raise ValueError(f"unknown backend kind {self.kind!r}")


@dataclass(frozen=True)
class TickOutcome:
    record: int
    timestamp: Optional[int]
    truth: Optional[Mapping[Hand, Label]]
    predicted: Mapping[Hand, Optional[Label]]
    smoothed: Mapping[Hand, Optional[Label]]

    def to_json(self) -> dict:
        def labels(m):
            return {h.value: ("Unknown" if m.get(h) is None else m[h].value) for h in Hand}
        return {
            "record": self.record,
            "timestamp_us": self.timestamp,
            "truth": None if self.truth is None else {h.value: l.value for h, l in self.truth.items()},
            "predicted": labels(self.predicted),
            "smoothed": labels(self.smoothed),
        }


@dataclass
class RunReport:
    ticks: list[TickOutcome]
    confusion: dict[str, ConfusionMatrix]
    unknown: dict[str, int]
    location_skipped: dict[str, int]
    alerts: list[AlertEvent]
    stream_stats: dict
    sets_emitted: int
    unmatched_sets: int
    wall_clock_s: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def ticks_per_second(self) -> float:
        return len(self.ticks) / self.wall_clock_s if self.wall_clock_s > 0 else 0.0

    def accuracy(self, task: str) -> Optional[float]:
        m = self.confusion[task]
        return accuracy(m) if m.total else None

    def to_json(self, include_timing: bool = True) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "run_report",
            "meta": self.meta,
            "ticks": [t.to_json() for t in self.ticks],
            "confusion": {k: m.to_json() for k, m in self.confusion.items()},
            "accuracy": {k: self.accuracy(k) for k in self.confusion},
            "unknown": self.unknown,
            "location_skipped": self.location_skipped,
            "alerts": [e.to_json() for e in self.alerts],
            "stream_stats": self.stream_stats,
            "sets_emitted": self.sets_emitted,
            "unmatched_sets": self.unmatched_sets,
        }
        if include_timing:
            doc["timing"] = {"wall_clock_s": self.wall_clock_s,
                             "ticks_per_second": self.ticks_per_second}
        return doc


def _frames_for(record: TickRecord, header: ManifestHeader) -> list[Frame]:
    frames = [Frame(v, ts, *header.resolution[v]) for v, ts in record.timestamps.items()
              if ts is not None]
    frames.sort(key=lambda f: f.timestamp)
    return frames


def run(manifest: Manifest, cfg: Optional[PipelineConfig] = None,
        backend: Union[BackendSpec, InferenceBackends, None] = None,
        on_event: Optional[Callable[[AlertEvent], None]] = None) -> RunReport:
    """Stream the manifest through sync, perception and the temporal stage.

    Each emitted frame set is attributed to the manifest record of its
    reference frame; later sets landing on an already-attributed record are
    counted in ``unmatched_sets``.
    """
    cfg = validate_config(cfg or PipelineConfig())
    manifest.validate()
    if backend is None:
        backend = BackendSpec()
    backends = backend.build(manifest) if isinstance(backend, BackendSpec) else backend
    sync = FrameSynchronizer.from_config(cfg)
    temporal = TemporalStage(cfg)
    index = manifest.frame_index()
    results: dict[int, tuple] = {}
    alerts: list[AlertEvent] = []
    counters = {"sets": 0, "unmatched": 0}

    def handle(frame_set: SyncedFrameSet) -> None:
        counters["sets"] += 1
        tick = process_tick(frame_set, backends, cfg)
        smoothed, event = temporal.push(tick)
        if event is not None:
            alerts.append(event)
            if on_event is not None:
                on_event(event)
        ref = next(f for f in frame_set.present() if f.timestamp == frame_set.reference_timestamp)
        rec = index[(ref.view, ref.timestamp)]
        if rec in results:
            counters["unmatched"] += 1
        else:
            results[rec] = (tick, smoothed)

    started = time.perf_counter()
    for record in manifest.records:
        for frame in _frames_for(record, manifest.header):
            for frame_set in sync.ingest(frame):
                handle(frame_set)
    for frame_set in sync.flush():
        handle(frame_set)
    elapsed = time.perf_counter() - started

    report = _build_report(manifest, results, alerts, sync, counters)
    report.wall_clock_s = elapsed
    if isinstance(backend, BackendSpec):
        report.meta["backend"] = {"kind": backend.kind,
                                  "object_error_rate": backend.object_error_rate,
                                  "location_error_rate": backend.location_error_rate,
                                  "seed": backend.seed}
    report.meta["config"] = {"smoothing_window": cfg.smoothing_window,
                             "alert_threshold": cfg.alert_threshold,
                             "alert_cooldown": cfg.alert_cooldown,
                             "sync_tolerance_us": cfg.sync_tolerance_us,
                             "nominal_fps": cfg.nominal_fps}
    return report


def _build_report(manifest, results, alerts, sync, counters) -> RunReport:
    obj_labels = [c.value for c in ObjectClass]
    pairs: dict[str, list] = {t: [] for t in TASKS}
    unknown = {h.value: 0 for h in Hand}
    skipped = {h.value: 0 for h in Hand}
    ticks = []
    for i, rec in enumerate(manifest.records):
        tick_result, smoothed = results.get(i, (None, None))
        predicted = {h: (None if tick_result is None else tick_result.hand(h).label) for h in Hand}
        smooth_labels = {h: (None if smoothed is None else
                             (smoothed.left if h is Hand.Left else smoothed.right).label)
                         for h in Hand}
        truth_labels = None
        if rec.truth is not None:
            truth_labels = {h: t.label for h, t in rec.truth.items()}
            for hand in Hand:
                state: Optional[HandState] = None if tick_result is None else tick_result.hand(hand)
                truth = rec.truth[hand]
                side = hand.value.lower()
                if state is None or state.is_unknown:
                    unknown[hand.value] += 1
                    continue
                pairs[f"{side}_object"].append((truth.object.value, state.object_probs.argmax().value))
                if truth.object is ObjectClass.NONE:
                    if state.location_probs is None:
                        skipped[hand.value] += 1
                    else:
                        pairs[f"{side}_location"].append(
                            (truth.location.value, state.location_probs.argmax().value))
        ticks.append(TickOutcome(i, None if tick_result is None else tick_result.timestamp,
                                 truth_labels, predicted, smooth_labels))
    confusion = {
        "left_object": ConfusionMatrix.from_pairs(obj_labels, pairs["left_object"]),
        "right_object": ConfusionMatrix.from_pairs(obj_labels, pairs["right_object"]),
        "left_location": ConfusionMatrix.from_pairs(
            [c.value for c in admissible_classes(Hand.Left)], pairs["left_location"]),
        "right_location": ConfusionMatrix.from_pairs(
            [c.value for c in admissible_classes(Hand.Right)], pairs["right_location"]),
    }
    return RunReport(ticks, confusion, unknown, skipped, alerts, sync.stats().as_dict(),
                     counters["sets"], counters["unmatched"])
