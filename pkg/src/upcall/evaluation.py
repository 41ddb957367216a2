"""Annotations, chronological splits, event matching and detection metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

OVERLAP_FRACTION = 0.5


@dataclass(frozen=True)
class Annotation:
    source_id: str
    t_start: float
    t_end: float
    snr: float | None = None

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"annotation end {self.t_end} must exceed start {self.t_start}")


@dataclass
class LabeledSample:
    spectrogram: np.ndarray
    label: int
    timestamp: float
    snr: float = float("nan")
    source_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass
class TimeSplit:
    train: list
    test: list
    t0: float
    gap: float


def time_split(samples: Sequence[LabeledSample], ratio: float = 0.85) -> TimeSplit:
    """Chronological train/test split at the first timestamp reaching ``ratio``.

    Samples strictly earlier than t0 train; the rest test. ``gap`` is the time
    between the latest training and the earliest test sample.
    """
    times = np.array([s.timestamp for s in samples], dtype=float)
    distinct = np.unique(times)
    if distinct.size < 2:
        raise DataError("time split needs samples at two or more distinct timestamps")
    n = times.size
    t0 = distinct[-1]
    for t in distinct[1:]:
        if np.count_nonzero(times < t) / n >= ratio:
            t0 = t
            break
    train = [s for s in samples if s.timestamp < t0]
    test = [s for s in samples if s.timestamp >= t0]
    gap = min(s.timestamp for s in test) - max(s.timestamp for s in train)
    return TimeSplit(train, test, float(t0), float(gap))


def merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def covered_length(a: float, b: float, union: list[tuple[float, float]]) -> float:
    """Length of [a, b] covered by a sorted, disjoint interval list."""
    total = 0.0
    for u, v in union:
        if v <= a:
            continue
        if u >= b:
            break
        total += min(b, v) - max(a, u)
    return total


@dataclass(frozen=True)
class MatchCounts:
    tp_ann: int
    fn: int
    tp_evt: int
    fp: int


def _event_intervals(events):
    buffered = [(e.t_start, e.t_end) for e in events]
    cores = [(e.core_start, e.core_end) for e in events]
    return buffered, cores


def _annotation_hits(annotations, union_events) -> list[bool]:
    return [covered_length(a.t_start, a.t_end, union_events) >= OVERLAP_FRACTION * (a.t_end - a.t_start)
            for a in annotations]


def _event_hits(cores, union_annotations) -> list[bool]:
    return [covered_length(a, b, union_annotations) >= OVERLAP_FRACTION * (b - a) for a, b in cores]


def match_events(annotations: Sequence[Annotation], events) -> MatchCounts:
    """Count detected annotations and true events on one timeline.

    An annotation is detected when the union of buffered events covers at least
    half of it. An event is true when the union of annotations covers at least
    half of its unbuffered core.
    """
    buffered, cores = _event_intervals(events)
    ann_hits = _annotation_hits(annotations, merge_intervals(buffered))
    evt_hits = _event_hits(cores, merge_intervals((a.t_start, a.t_end) for a in annotations))
    tp_ann = sum(ann_hits)
    tp_evt = sum(evt_hits)
    return MatchCounts(tp_ann, len(ann_hits) - tp_ann, tp_evt, len(evt_hits) - tp_evt)


@dataclass(frozen=True)
class EvalReport:
    recall: float | None
    precision: float | None
    fpr: float
    f1: float | None
    tp_ann: int
    tp_evt: int
    fp: int
    fn: int
    duration_h: float
    retained: int | None = None
    threshold: float | None = field(default=None, compare=False)

    @property
    def tp(self) -> int:
        return self.tp_ann

    def as_row(self) -> dict:
        return {
            "threshold": _fmt(self.threshold),
            "recall": _fmt(self.recall),
            "precision": _fmt(self.precision),
            "fpr": _fmt(self.fpr),
            "f1": _fmt(self.f1),
            "tp": self.tp_ann,
            "fp": self.fp,
            "fn": self.fn,
        }

    def summary(self) -> str:
        def pct(v):
            return "n/a" if v is None else f"{100 * v:.1f}%"
        lines = [
            f"recall     {pct(self.recall)}  ({self.tp_ann}/{self.tp_ann + self.fn} annotations)",
            f"precision  {pct(self.precision)}  ({self.tp_evt}/{self.tp_evt + self.fp} events)",
            f"F1         {pct(self.f1)}",
            f"FP rate    {self.fpr:.2f} per hour over {self.duration_h:.3f} h",
        ]
        if self.retained is not None:
            lines.append(f"retained   {self.retained} annotations")
        return "\n".join(lines)


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def f1_score(precision: float | None, recall: float | None) -> float | None:
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def compute_metrics(counts: MatchCounts, duration_h: float, retained: int | None = None,
                    threshold: float | None = None) -> EvalReport:
    if not duration_h > 0:
        raise DataError(f"duration must be positive, got {duration_h} h")
    n_ann = counts.tp_ann + counts.fn
    n_evt = counts.tp_evt + counts.fp
    recall = counts.tp_ann / n_ann if n_ann else None
    precision = counts.tp_evt / n_evt if n_evt else None
    return EvalReport(recall, precision, counts.fp / duration_h, f1_score(precision, recall),
                      counts.tp_ann, counts.tp_evt, counts.fp, counts.fn, duration_h,
                      retained, threshold)


def classification_f1(y_true, y_pred) -> float:
    """Binary F1 with the positive class 1; 0.0 when there are no true positives."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = np.count_nonzero(y_true & y_pred)
    if tp == 0:
        return 0.0
    precision = tp / np.count_nonzero(y_pred)
    recall = tp / np.count_nonzero(y_true)
    return 2 * precision * recall / (precision + recall)


def snr_filtered_counts(annotations: Sequence[Annotation], events,
                        snr_min: float) -> tuple[MatchCounts, int]:
    """Match against annotations with SNR above ``snr_min`` only.

    Events that fail against the retained calls but would have matched the full
    annotation set belong to removed calls and count neither as true nor false.
    """
    missing = [a for a in annotations if a.snr is None or math.isnan(a.snr)]
    if missing:
        a = missing[0]
        raise DataError(f"annotation {a.source_id} [{a.t_start}, {a.t_end}] has no SNR value")
    kept = [a for a in annotations if a.snr > snr_min]
    buffered, cores = _event_intervals(events)
    ann_hits = _annotation_hits(kept, merge_intervals(buffered))
    hits_kept = _event_hits(cores, merge_intervals((a.t_start, a.t_end) for a in kept))
    hits_all = _event_hits(cores, merge_intervals((a.t_start, a.t_end) for a in annotations))
    tp_evt = sum(hits_kept)
    fp = sum(1 for k, a in zip(hits_kept, hits_all) if not k and not a)
    tp_ann = sum(ann_hits)
    return MatchCounts(tp_ann, len(kept) - tp_ann, tp_evt, fp), len(kept)


def snr_filtered_metrics(annotations: Sequence[Annotation], events, snr_min: float,
                         duration_h: float) -> EvalReport:
    counts, retained = snr_filtered_counts(annotations, events, snr_min)
    return compute_metrics(counts, duration_h, retained)


def sum_counts(parts: Iterable[MatchCounts]) -> MatchCounts:
    tp_ann = fn = tp_evt = fp = 0
    for c in parts:
        tp_ann += c.tp_ann
        fn += c.fn
        tp_evt += c.tp_evt
        fp += c.fp
    return MatchCounts(tp_ann, fn, tp_evt, fp)


def threshold_sweep(annotations: Sequence[Annotation], series, thresholds: Sequence[float],
                    duration_h: float | None = None, snr_min: float | None = None) -> list[EvalReport]:
    """One report per threshold, rerunning binarize, merge and match on a smoothed series."""
    from .detector import events_from_series

    thresholds = list(thresholds)
    if not thresholds:
        raise DataError("threshold sweep needs at least one threshold")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise DataError("thresholds must be sorted ascending")
    if duration_h is None:
        duration_h = series.duration / 3600.0
    reports = []
    for thr in thresholds:
        events = events_from_series(series, thr)
        if snr_min is None:
            counts, retained = match_events(annotations, events), None
        else:
            counts, retained = snr_filtered_counts(annotations, events, snr_min)
        reports.append(compute_metrics(counts, duration_h, retained, thr))
    return reports


def percentile_summary(values: Sequence[float], q_lo: float = 10.0, q_hi: float = 90.0) -> dict:
    """Mean and 10%/90% percentiles (linear interpolation) across training runs."""
    v = np.asarray(values, dtype=float)
    return {"mean": float(v.mean()), "p10": float(np.percentile(v, q_lo)),
            "p90": float(np.percentile(v, q_hi)), "std": float(v.std())}


ANNOTATION_FIELDS = ("source_id", "t_start", "t_end", "snr")
REPORT_FIELDS = ("threshold", "recall", "precision", "fpr", "f1", "tp", "fp", "fn")


def read_annotations(path) -> list[Annotation]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such annotation file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty annotation file")
        header = [h.strip() for h in header]
        if header[:3] != ["source_id", "t_start", "t_end"]:
            raise DataError(f"{path}:1: header must start with source_id,t_start,t_end")
        has_snr = "snr" in header
        snr_col = header.index("snr") if has_snr else None
        out = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t_start, t_end = float(row[1]), float(row[2])
                snr = None
                if has_snr and snr_col < len(row) and row[snr_col].strip():
                    snr = float(row[snr_col])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: malformed row {row!r} ({exc})") from None
            if not t_end > t_start:
                raise DataError(f"{path}:{line_no}: t_end {t_end} must exceed t_start {t_start}")
            out.append(Annotation(row[0].strip(), t_start, t_end, snr))
    return out


def write_annotations(path, annotations: Sequence[Annotation]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ANNOTATION_FIELDS)
        for a in annotations:
            w.writerow([a.source_id, repr(float(a.t_start)), repr(float(a.t_end)),
                        "" if a.snr is None else repr(float(a.snr))])


def write_report_csv(path, reports: Sequence[EvalReport]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.as_row())


def write_curve_csv(path, reports: Sequence[EvalReport], x: str, y: str) -> None:
    """Plot-ready two-column curve, e.g. x='recall', y='precision'."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([x, y])
        for r in reports:
            w.writerow([_fmt(getattr(r, x)), _fmt(getattr(r, y))])
