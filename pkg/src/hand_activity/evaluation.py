"""Evaluation arithmetic: confusion-matrix metrics, IoU and single-class
AP@0.5, stage throughput composition, dataset splits and fleet impact."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import HandActivityError
from .perception import BoundingBox


class EmptyMatrix(HandActivityError):
    pass


class NoGroundTruth(HandActivityError):
    pass


class InsufficientData(HandActivityError):
    pass


class MatrixFormatError(HandActivityError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    labels: tuple[str, ...]
    counts: np.ndarray = field(compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if counts.shape != (n, n):
            raise ValueError(f"counts must be {n}x{n}, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    @classmethod
    def zeros(cls, labels: Sequence[str]) -> "ConfusionMatrix":
        return cls(tuple(labels), np.zeros((len(labels), len(labels)), dtype=np.int64))

    @classmethod
    def from_pairs(cls, labels: Sequence[str], pairs: Iterable[tuple[str, str]]) -> "ConfusionMatrix":
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for truth, pred in pairs:
            counts[index[truth], index[pred]] += 1
        return cls(tuple(labels), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def is_diagonal(self) -> bool:
        return not np.any(self.counts - np.diag(np.diag(self.counts)))

    def permuted(self, order: Sequence[int]) -> "ConfusionMatrix":
        order = list(order)
        return ConfusionMatrix(tuple(self.labels[i] for i in order),
                               self.counts[np.ix_(order, order)])

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["true\\pred", *self.labels])
        for lab, row in zip(self.labels, self.counts.tolist()):
            writer.writerow([lab, *row])
        return buf.getvalue()


def read_matrix_csv(source: Union[str, Path, io.TextIOBase]) -> ConfusionMatrix:
    """Parse a matrix CSV: header row of labels (optionally preceded by a
    corner cell), then one row per true class, optionally led by its label.
    Blank cells count as zero; thousands separators are accepted."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(source))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise MatrixFormatError("empty CSV")
    header = [c.strip() for c in rows[0]]
    body = rows[1:]
    n = len(body)
    if len(header) == n + 1:
        labels = header[1:]
    elif len(header) == n:
        labels = header
    else:
        raise MatrixFormatError(f"header has {len(header)} cells for {n} data rows")
    counts = []
    for lineno, row in enumerate(body, start=2):
        cells = [c.strip() for c in row]
        if len(cells) == n + 1:
            if cells[0] != labels[lineno - 2]:
                raise MatrixFormatError(f"line {lineno}: row label {cells[0]!r} "
                                        f"does not match column {labels[lineno - 2]!r}")
            cells = cells[1:]
        if len(cells) != n:
            raise MatrixFormatError(f"line {lineno}: expected {n} counts, got {len(cells)}")
        try:
            counts.append([int(c.replace(",", "")) if c else 0 for c in cells])
        except ValueError:
            raise MatrixFormatError(f"line {lineno}: non-integer count") from None
    try:
        return ConfusionMatrix(tuple(labels), np.array(counts, dtype=np.int64))
    except ValueError as exc:
        raise MatrixFormatError(str(exc)) from None


PUBLISHED_MATRICES = ("left_location", "right_location", "left_object", "right_object")


def published_matrix(name: str) -> ConfusionMatrix:
    """One of the four published hand-classification confusion matrices."""
    if name not in PUBLISHED_MATRICES:
        raise KeyError(name)
    path = resources.files("hand_activity") / "data" / "published" / f"{name}.csv"
    with path.open("r", newline="") as fh:
        return read_matrix_csv(fh)


def accuracy(m: ConfusionMatrix) -> float:
    total = m.total
    if total == 0:
        raise EmptyMatrix("matrix has no counts")
    return int(np.trace(m.counts)) / total


def per_class_metrics(m: ConfusionMatrix) -> dict[str, tuple[Optional[float], Optional[float]]]:
    """``label -> (precision, recall)``; ``None`` where the denominator is zero."""
    if m.total == 0:
        raise EmptyMatrix("matrix has no counts")
    cols = m.counts.sum(axis=0)
    rows = m.counts.sum(axis=1)
    out = {}
    for i, lab in enumerate(m.labels):
        tp = int(m.counts[i, i])
        out[lab] = (tp / int(cols[i]) if cols[i] else None,
                    tp / int(rows[i]) if rows[i] else None)
    return out


# -- detection ---------------------------------------------------------------

def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class DetectionSample:
    """Ground truth and confidence-scored predictions for one image."""

    ground_truth: tuple[BoundingBox, ...]
    predictions: tuple[BoundingBox, ...]


def match_detections(samples: Sequence[DetectionSample], iou_threshold: float = 0.5
                     ) -> list[bool]:
    """TP/FP flag per prediction, in global descending-confidence order.

    Each prediction takes the still-unmatched ground truth of its image with
    the highest IoU (lowest index on ties) if that IoU reaches the threshold.
    Equal confidences keep (image, prediction) input order.
    """
    order = sorted(((-p.confidence, si, pi) for si, s in enumerate(samples)
                    for pi, p in enumerate(s.predictions)))
    taken = [[False] * len(s.ground_truth) for s in samples]
    flags = []
    for _, si, pi in order:
        pred = samples[si].predictions[pi]
        best, best_iou = None, iou_threshold
        for gi, gt in enumerate(samples[si].ground_truth):
            if taken[si][gi]:
                continue
            v = iou(pred, gt)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = gi, v
        if best is not None:
            taken[si][best] = True
        flags.append(best is not None)
    return flags


def average_precision(tp_flags: Sequence[bool], n_ground_truth: int) -> float:
    """All-points interpolated AP over a ranked TP/FP list.

    AP = sum over recall steps of (recall increase) x (max precision at any
    rank at or after the step), accumulated with ``math.fsum``.
    """
    if n_ground_truth <= 0:
        raise NoGroundTruth("no ground-truth boxes")
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.int64))
    ranks = np.arange(1, len(tp_flags) + 1)
    precision = tp / ranks
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0], tp[:-1]))
    steps = np.nonzero(tp - prev)[0]
    return math.fsum(float((tp[k] - prev[k]) / n_ground_truth) * float(envelope[k]) for k in steps)


def map50(samples: Sequence[DetectionSample]) -> float:
    """Single-class mean average precision at IoU >= 0.5."""
    n_gt = sum(len(s.ground_truth) for s in samples)
    if n_gt == 0:
        raise NoGroundTruth("no ground-truth boxes in any sample")
    return average_precision(match_detections(samples, 0.5), n_gt)


# -- throughput, splits, fleet impact ----------------------------------------------

def compose_throughput(rates: Sequence[float], mode: str = "sequential") -> float:
    """Frames/second of chained stages: run back to back, or overlapped so the
    slowest stage sets the pace."""
    rates = [float(r) for r in rates]
    if not rates:
        raise ValueError("empty stage profile")
    if any(r <= 0 for r in rates):
        raise ValueError("stage rates must be positive")
    if mode == "sequential":
        return 1.0 / math.fsum(1.0 / r for r in rates)
    if mode == "pipelined":
        return min(rates)
    raise ValueError(f"unknown mode {mode!r}")


def effective_reduction(projected_penetration: float, reduction_in_equipped: float) -> float:
    """Fleet-wide accident reduction: equipped share times per-vehicle reduction."""
    return projected_penetration * reduction_in_equipped


def fleet_impact(equipped: int, fleet: int, fraction: float, accidents: int) -> tuple[float, int]:
    """``(penetration, prevented accidents)`` for a fleet-wide reduction ``fraction``."""
    if fleet <= 0:
        raise ValueError("fleet must be positive")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    return equipped / fleet, int(math.floor(accidents * fraction + 0.5))


def split_dataset(sequences: Sequence[tuple[str, int]],
                  ratios: Sequence[float] = (0.8, 0.1, 0.1)) -> tuple[list[int], list[int], list[int]]:
    """Contiguous train/val/test split by whole sequence.

    Each cut is placed at the sequence boundary nearest its cumulative frame
    target, keeping at least one sequence per part.
    """
    if len(ratios) != 3 or abs(math.fsum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative fractions summing to 1")
    n = len(sequences)
    if n < 3:
        raise InsufficientData(f"need at least 3 sequences, got {n}")
    sizes = [int(s) for _, s in sequences]
    if any(s < 0 for s in sizes):
        raise ValueError("sequence sizes must be non-negative")
    total = sum(sizes)
    bounds = np.concatenate(([0], np.cumsum(sizes)))  # bounds[k] = frames before sequence k

    def nearest_cut(target: float, lo: int, hi: int) -> int:
        return min(range(lo, hi + 1), key=lambda k: (abs(bounds[k] - target), k))

    c1 = nearest_cut(ratios[0] * total, 1, n - 2)
    c2 = nearest_cut((ratios[0] + ratios[1]) * total, c1 + 1, n - 1)
    return list(range(c1)), list(range(c1, c2)), list(range(c2, n))
