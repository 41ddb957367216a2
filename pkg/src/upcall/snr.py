"""Heuristic per-sample SNR and the chirp-template candidate generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .signal import SAMPLE_RATE, NFFT, STEP_S, WINDOW_S, Spectrogram, denoise

BAND_LO = 80.0
BAND_HI = 200.0
CALL_S = 1.0
FLANK_S = 0.5
TRACE_HALF_WIDTH = 3

TEMPLATE_F0 = 100.0
TEMPLATE_F1 = 200.0
TEMPLATE_HALF_BW = 10.0


@dataclass(frozen=True)
class CallWindow:
    t_start_idx: int
    width_idx: int
    trace: np.ndarray  # absolute column index per time slice of the window

    def __post_init__(self):
        if len(self.trace) != self.width_idx:
            raise ValueError("trace length must equal window width")


@dataclass(frozen=True)
class ChirpTemplate:
    mask: np.ndarray
    time_step: float = STEP_S
    freq_step: float = SAMPLE_RATE / NFFT

    @property
    def n_slices(self) -> int:
        return self.mask.shape[0]


def window_objective(band: np.ndarray, width: int) -> np.ndarray:
    """Score of every legal window start on a band-limited denoised matrix.

    For start s the score is sum_t max_f X[s+t, f] + sum_f max_t X[s+t, f].
    """
    n = band.shape[0] - width + 1
    row_max = band.max(axis=1)
    row_term = np.convolve(row_max, np.ones(width), mode="valid")
    windows = np.lib.stride_tricks.sliding_window_view(band, width, axis=0)  # (n, F, width)
    col_term = windows.max(axis=2).sum(axis=1)
    return row_term[:n] + col_term


def locate_call_window(denoised: Spectrogram) -> CallWindow:
    """Find the 1-s window that most likely holds the call, and its ridge trace."""
    width = denoised.time_slices(CALL_S)
    x = denoised.values
    if x.shape[0] < width:
        raise DataError(f"spectrogram spans {denoised.duration:.3f} s, needs at least {CALL_S} s")
    cols = denoised.freq_columns(BAND_LO, BAND_HI)
    if cols.stop - cols.start < 1 or cols.stop * denoised.freq_step < BAND_HI - denoised.freq_step:
        raise DataError("spectrogram does not cover the 80-200 Hz band")
    band = x[:, cols]
    start = int(np.argmax(window_objective(band, width)))  # argmax returns the first maximum
    trace = cols.start + np.argmax(band[start:start + width], axis=1)
    return CallWindow(start, width, trace)


def estimate_snr(spec: Spectrogram) -> float:
    """SNR in dB of the call-like ridge against its 0.5-s flanks.

    The ridge (trace +/- 3 bins) median of the raw dB matrix is compared with the
    mean of the two flank medians over 80-200 Hz. Flanks are clamped to the matrix;
    an empty flank is ignored.
    """
    width = spec.time_slices(CALL_S)
    flank = spec.time_slices(FLANK_S)
    t_total, f_total = spec.values.shape
    if t_total < width + 2 * flank:
        raise DataError(
            f"spectrogram spans {spec.duration:.3f} s; SNR estimation needs {CALL_S + 2 * FLANK_S} s")
    return ridge_contrast(spec, locate_call_window(denoise(spec)))


def ridge_contrast(spec: Spectrogram, window: CallWindow) -> float:
    """Ridge median minus mean flank median (dB) for a given call window."""
    flank = spec.time_slices(FLANK_S)
    x = spec.values
    t_total, f_total = x.shape
    width = window.width_idx
    rows = np.arange(window.t_start_idx, window.t_start_idx + width)
    offsets = np.arange(-TRACE_HALF_WIDTH, TRACE_HALF_WIDTH + 1)
    trace_cols = np.asarray(window.trace)[:, None] + offsets[None, :]
    valid = (trace_cols >= 0) & (trace_cols < f_total)
    ridge = x[np.broadcast_to(rows[:, None], trace_cols.shape)[valid], trace_cols[valid]]
    ridge_level = np.median(ridge)

    cols = spec.freq_columns(BAND_LO, BAND_HI)
    s = window.t_start_idx
    before = x[max(0, s - flank):s, cols]
    after = x[s + width:min(t_total, s + width + flank), cols]
    levels = [np.median(part) for part in (before, after) if part.size]
    if not levels:
        raise DataError("call window leaves no background flank")
    return float(ridge_level - np.mean(levels))


def build_template(time_step: float = STEP_S, freq_step: float = SAMPLE_RATE / NFFT,
                   n_freq: int = NFFT // 2 + 1) -> ChirpTemplate:
    """Binary mask of a 1-s linear 100->200 Hz sweep, +/-10 Hz around the centre."""
    n_rows = int(round(CALL_S / time_step))
    t = np.arange(n_rows) / (n_rows - 1)
    centre = TEMPLATE_F0 + (TEMPLATE_F1 - TEMPLATE_F0) * t
    freqs = np.arange(n_freq) * freq_step
    mask = (np.abs(freqs[None, :] - centre[:, None]) <= TEMPLATE_HALF_BW + 1e-9).astype(np.float64)
    return ChirpTemplate(mask, time_step, freq_step)


def template_correlation(values: np.ndarray, template: ChirpTemplate) -> np.ndarray:
    """Normalized cross-correlation of the template at every time offset, in [-1, 1]."""
    m = template.mask
    rows = m.shape[0]
    if values.shape[0] < rows:
        return np.zeros(0)
    if values.shape[1] != m.shape[1]:
        raise DataError(f"template has {m.shape[1]} frequency columns, spectrogram {values.shape[1]}")
    mc = m - m.mean()
    m_norm = np.sqrt(np.sum(mc * mc))
    patches = np.lib.stride_tricks.sliding_window_view(values, rows, axis=0)  # (n, F, rows)
    patches = patches.transpose(0, 2, 1).reshape(patches.shape[0], -1)
    pc = patches - patches.mean(axis=1, keepdims=True)
    p_norm = np.sqrt(np.sum(pc * pc, axis=1))
    num = pc @ mc.ravel()
    denom = p_norm * m_norm
    score = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return np.clip(score, -1.0, 1.0)


def tfbd_candidates(spec: Spectrogram, threshold: float = 0.5,
                    template: ChirpTemplate | None = None) -> list[float]:
    """Midpoints (s) of template matches on the denoised spectrogram.

    Peaks are local maxima of the correlation at or above ``threshold``, thinned
    so that no two are closer than half a template length.
    """
    template = template or build_template(spec.time_step, spec.freq_step, spec.values.shape[1])
    score = template_correlation(denoise(spec).values, template)
    if score.size == 0:
        return []
    padded = np.concatenate(([-np.inf], score, [-np.inf]))
    is_peak = (score >= padded[:-2]) & (score > padded[2:]) & (score >= threshold)
    peaks = sorted(np.flatnonzero(is_peak), key=lambda i: (-score[i], i))
    min_sep = template.n_slices // 2
    kept: list[int] = []
    for i in peaks:
        if all(abs(i - k) > min_sep for k in kept):
            kept.append(i)
    half = (template.n_slices * spec.time_step) / 2
    return [spec.start_time + WINDOW_S / 2 + k * spec.time_step + half for k in sorted(kept)]
