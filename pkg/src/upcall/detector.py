"""Sliding-window detection on continuous audio.

A scorer is any callable taking a (B, 94, 129) stack of spectrograms and
returning B positive-class scores in [0, 1]; the residual network and the LDA
baseline both qualify.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataError
from .signal import SAMPLE_RATE, SEGMENT_S, AudioClip, frame_matrix, n_frames, _stft_db

HOP_S = 0.5
SMOOTH_BINS = 5
BUFFER_BINS = 2

Scorer = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ScoreSeries:
    """Window scores on a regular grid of ``hop``-wide bins.

    Bin i spans [start_time + i*hop, start_time + (i+1)*hop); score_stream
    centres each bin on the midpoint of its 3-s window.
    """

    scores: np.ndarray
    hop: float = HOP_S
    start_time: float = 0.0
    source_id: str = ""

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ValueError("scores must be one-dimensional")
        if np.any((scores < 0) | (scores > 1)):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.scores.size

    @property
    def duration(self) -> float:
        """Span of the recording that produced the series (windows, not bins)."""
        return (len(self) - 1) * self.hop + SEGMENT_S


@dataclass(frozen=True)
class DetectionEvent:
    t_start: float
    t_end: float
    core_start: float
    core_end: float
    peak_score: float
    source_id: str = ""


def score_stream(clip: AudioClip, scorer: Scorer, window_s: float = SEGMENT_S,
                 hop_s: float = HOP_S, chunk: int = 256) -> ScoreSeries:
    """Score every ``window_s`` window at ``hop_s`` steps, in window order."""
    if clip.sample_rate != SAMPLE_RATE:
        raise DataError(f"detection needs {SAMPLE_RATE} Hz audio, got {clip.sample_rate} Hz")
    win = int(round(window_s * SAMPLE_RATE))
    hop = int(round(hop_s * SAMPLE_RATE))
    count = n_frames(clip.samples.size, win, hop)
    if count == 0:
        raise DataError(f"clip of {clip.duration:.3f} s is shorter than the {window_s} s window")
    frames = frame_matrix(clip.samples, win, hop)[:count]
    scores = np.empty(count)
    for i in range(0, count, chunk):
        out = np.asarray(scorer(_stft_db(frames[i:i + chunk])), dtype=np.float64).reshape(-1)
        if out.size != min(chunk, count - i):
            raise DataError(f"scorer returned {out.size} scores for {min(chunk, count - i)} windows")
        scores[i:i + out.size] = out
    if np.any(~np.isfinite(scores)) or np.any((scores < 0) | (scores > 1)):
        raise DataError("scorer produced values outside [0, 1]")
    start = clip.start_time + (window_s - hop_s) / 2
    return ScoreSeries(scores, hop_s, start, clip.source_id)


def smooth(series: ScoreSeries, width: int = SMOOTH_BINS) -> ScoreSeries:
    """Centred moving average; edge bins average over the part of the window that exists."""
    if width < 1 or width % 2 == 0:
        raise ValueError(f"smoothing width must be a positive odd integer, got {width}")
    half = width // 2
    x = series.scores
    sums = np.lib.stride_tricks.sliding_window_view(np.pad(x, half), width).sum(axis=1)
    counts = np.lib.stride_tricks.sliding_window_view(np.pad(np.ones_like(x), half), width).sum(axis=1)
    return ScoreSeries(np.clip(sums / counts, 0.0, 1.0), series.hop, series.start_time, series.source_id)


def binarize(series: ScoreSeries, threshold: float) -> np.ndarray:
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return (series.scores >= threshold).astype(np.int8)


def runs_of_ones(binary) -> list[tuple[int, int]]:
    """(first index, length) of each maximal run of ones."""
    b = np.concatenate(([0], np.asarray(binary, dtype=np.int8), [0]))
    edges = np.flatnonzero(np.diff(b))
    return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


def merge_events(binary, hop: float = HOP_S, buffer_bins: int = BUFFER_BINS, scores=None,
                 start_time: float = 0.0, source_id: str = "") -> list[DetectionEvent]:
    """Turn runs of positive bins into buffered detection events.

    A run of N bins from index b has core [t, t + N*hop] with t = start + b*hop,
    buffered to [t - buffer*hop, t + (N + buffer)*hop]. Overlapping buffers are
    not re-merged.
    """
    if not hop > 0:
        raise ValueError("hop must be positive")
    binary = np.asarray(binary)
    scores = np.ones(binary.size) if scores is None else np.asarray(scores, dtype=float)
    events = []
    for b, n in runs_of_ones(binary):
        core_start = start_time + b * hop
        core_end = start_time + (b + n) * hop
        events.append(DetectionEvent(core_start - buffer_bins * hop, core_end + buffer_bins * hop,
                                     core_start, core_end, float(scores[b:b + n].max()), source_id))
    return events


def events_from_series(smoothed: ScoreSeries, threshold: float) -> list[DetectionEvent]:
    """Binarize and merge an already smoothed series."""
    return merge_events(binarize(smoothed, threshold), smoothed.hop, BUFFER_BINS, smoothed.scores,
                        smoothed.start_time, smoothed.source_id)


def detect(clip: AudioClip, scorer: Scorer, threshold: float, smooth_width: int = SMOOTH_BINS) -> list[DetectionEvent]:
    return events_from_series(smooth(score_stream(clip, scorer), smooth_width), threshold)


EVENT_FIELDS = ("source_id", "t_start", "t_end", "core_start", "core_end", "peak_score")


def write_events_csv(path, events) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_FIELDS)
        for e in events:
            w.writerow([e.source_id] + [f"{v:.6f}" for v in
                                        (e.t_start, e.t_end, e.core_start, e.core_end, e.peak_score)])


def read_events_csv(path) -> list[DetectionEvent]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such detections file: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(EVENT_FIELDS):
            raise DataError(f"{path}:1: expected header {','.join(EVENT_FIELDS)}")
        out = []
        for line_no, row in enumerate(reader, start=2):
            try:
                out.append(DetectionEvent(float(row["t_start"]), float(row["t_end"]), float(row["core_start"]),
                                          float(row["core_end"]), float(row["peak_score"]), row["source_id"]))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: malformed row ({exc})") from None
    return out


def write_scores_csv(path, series: ScoreSeries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "bin_start", "score"])
        for i, s in enumerate(series.scores):
            w.writerow([series.source_id, f"{series.start_time + i * series.hop:.6f}", f"{s:.6f}"])
