"""Synthetic upcalls, noise backgrounds, labelled segments and continuous recordings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .evaluation import Annotation, LabeledSample
from .signal import SAMPLE_RATE, SEGMENT_S, AudioClip, compute_spectrogram
from .snr import BAND_HI, BAND_LO, CALL_S, CallWindow, ridge_contrast

NOISE_KINDS = ("white", "tonal", "transient")
RAMP_S = 0.05


@dataclass(frozen=True)
class SynthSpec:
    n_pos: int = 500
    n_neg: int = 500
    snr_range: tuple[float, float] = (5.0, 15.0)
    jitter_max: float = 0.5
    noise_mix: dict = field(default_factory=lambda: {"white": 0.5, "tonal": 0.25, "transient": 0.25})
    confuser_frac: float = 0.5
    noise_level_range: tuple[float, float] = (0.5, 2.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_pos < 0 or self.n_neg < 0:
            raise ValueError("sample counts must be non-negative")
        if not 0 <= self.jitter_max <= 1.0:
            raise ValueError("jitter_max must lie in [0, 1] s to keep the call inside the segment")
        if any(w < 0 for w in self.noise_mix.values()) or not any(self.noise_mix.values()):
            raise ValueError("noise_mix weights must be non-negative and not all zero")
        unknown = set(self.noise_mix) - set(NOISE_KINDS)
        if unknown:
            raise ValueError(f"unknown noise kinds: {sorted(unknown)}")
        if self.snr_range[0] > self.snr_range[1]:
            raise ValueError("snr_range must be (low, high)")


def raised_cosine_envelope(n: int, ramp_n: int) -> np.ndarray:
    env = np.ones(n)
    ramp_n = min(ramp_n, n // 2)
    if ramp_n > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_n) / ramp_n)
        env[:ramp_n] = ramp
        env[n - ramp_n:] = ramp[::-1]
    return env


def synth_upcall(duration: float = 1.0, f0: float = 100.0, f1: float = 200.0,
                 amplitude: float = 1.0, sample_rate: float = SAMPLE_RATE) -> AudioClip:
    """Linear up-sweep with 50-ms raised-cosine ramps and the given peak amplitude."""
    if not f1 > f0:
        raise ValueError("f1 must exceed f0")
    if not 2 * f1 < sample_rate:
        raise ValueError(f"sweep end {f1} Hz aliases at sample rate {sample_rate} Hz")
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t * t)
    env = raised_cosine_envelope(n, int(round(RAMP_S * sample_rate)))
    return AudioClip(amplitude * env * np.sin(phase), float(sample_rate))


def synth_noise(kind: str, duration: float, level: float,
                rng: np.random.Generator | int | None = None,
                sample_rate: float = SAMPLE_RATE) -> AudioClip:
    """Noise background; ``level`` is the target RMS amplitude.

    white: Gaussian. tonal: one to three steady sinusoids below 250 Hz.
    transient: Poisson-timed 10-ms decaying broadband clicks.
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if not duration > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(rng)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "tonal":
        k = int(rng.integers(1, 4))
        freqs = rng.uniform(20.0, 250.0, size=k)
        phases = rng.uniform(0, 2 * np.pi, size=k)
        weights = rng.uniform(0.5, 1.0, size=k)
        x = (weights[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    else:
        rate_hz = 2.0
        burst_n = max(1, int(round(0.010 * sample_rate)))
        decay = np.exp(-np.arange(burst_n) / (burst_n / 4))
        x = np.zeros(n)
        n_clicks = rng.poisson(rate_hz * duration)
        for start in rng.integers(0, n, size=n_clicks):
            stop = min(n, start + burst_n)
            x[start:stop] += rng.standard_normal(stop - start) * decay[:stop - start] * rng.uniform(0.5, 1.5)
        if n_clicks == 0:
            x[int(rng.integers(0, n))] = 1.0
    rms = np.sqrt(np.mean(x * x))
    if level == 0 or rms == 0:
        return AudioClip(np.zeros(n), float(sample_rate))
    return AudioClip(x * (level / rms), float(sample_rate))


def band_power(x: np.ndarray, sample_rate: float = SAMPLE_RATE,
               f_lo: float = BAND_LO, f_hi: float = BAND_HI) -> float:
    """Mean power of ``x`` restricted to [f_lo, f_hi] Hz (periodogram sum)."""
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    # one-sided periodogram, interior bins counted twice
    return float(2.0 * np.sum(np.abs(spectrum[sel]) ** 2) / x.size ** 2)


def call_amplitude_for_snr(noise_segment: np.ndarray, snr_db: float,
                           sample_rate: float = SAMPLE_RATE) -> float:
    """Peak amplitude giving the requested in-band SNR over the call's duration."""
    unit = synth_upcall(amplitude=1.0, sample_rate=sample_rate).samples
    signal_power = float(np.mean(unit * unit))
    noise_power = band_power(noise_segment[: unit.size], sample_rate)
    if noise_power <= 0:
        raise DataError("noise segment has no power in the 80-200 Hz band")
    return float(np.sqrt(noise_power * 10 ** (snr_db / 10) / signal_power))


def known_call_window(clean: AudioClip) -> CallWindow:
    """Call window and ridge read off the spectrogram of the call alone."""
    spec = compute_spectrogram(clean)
    width = spec.time_slices(CALL_S)
    cols = spec.freq_columns(BAND_LO, BAND_HI)
    power = 10 ** (spec.values[:, cols] / 10)
    energy = np.convolve(power.sum(axis=1), np.ones(width), mode="valid")
    start = int(np.argmax(energy))
    trace = cols.start + np.argmax(spec.values[start:start + width, cols], axis=1)
    return CallWindow(start, width, trace)


def trace_snr(background: np.ndarray, call: np.ndarray, start: int,
              sample_rate: float = SAMPLE_RATE) -> float:
    """Ridge-over-flank contrast (dB) of background + call, measured where the call really is."""
    clean = np.zeros_like(background)
    clean[start:start + call.size] = call
    window = known_call_window(AudioClip(clean, sample_rate))
    return ridge_contrast(compute_spectrogram(AudioClip(background + clean, sample_rate)), window)


def call_amplitude_for_trace_snr(background: np.ndarray, start: int, snr_db: float,
                                 sample_rate: float = SAMPLE_RATE, iterations: int = 40) -> float:
    """Peak amplitude at which :func:`trace_snr` reaches ``snr_db``, by bisection on log amplitude.

    Unlike the band-power definition this nominal value is expressed in the same
    units as the estimator, so it is the reference used to check its calibration.
    """
    unit = synth_upcall(sample_rate=sample_rate).samples
    rms = float(np.sqrt(np.mean(background * background)))
    if rms == 0:
        raise DataError("background is silent")
    lo, hi = np.log(rms) - 12.0, np.log(rms) + 12.0
    f = lambda la: trace_snr(background, np.exp(la) * unit, start, sample_rate) - snr_db
    if f(lo) > 0:
        return float(np.exp(lo))
    if f(hi) < 0:
        raise DataError(f"cannot reach {snr_db} dB on this background")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def _background(rng: np.random.Generator, duration: float, level: float,
                noise_mix: dict, extra_kind: str | None = None) -> np.ndarray:
    """White floor plus, optionally, one coloured component drawn from ``noise_mix``."""
    x = synth_noise("white", duration, level, rng).samples
    if extra_kind is None:
        kinds = list(noise_mix)
        weights = np.array([noise_mix[k] for k in kinds], dtype=float)
        extra_kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    if extra_kind != "white":
        x = x + synth_noise(extra_kind, duration, level * rng.uniform(0.5, 1.5), rng).samples
    return x


def synth_segment(rng: np.random.Generator, positive: bool, snr_db: float,
                  spec: SynthSpec) -> np.ndarray:
    """One 3-s waveform at 1000 Hz."""
    n = int(round(SEGMENT_S * SAMPLE_RATE))
    level = rng.uniform(*spec.noise_level_range)
    if positive:
        x = _background(rng, SEGMENT_S, level, spec.noise_mix)
        call = synth_upcall().samples
        offset = rng.uniform(-spec.jitter_max, spec.jitter_max)
        start = int(round((SEGMENT_S / 2 + offset - 0.5) * SAMPLE_RATE))
        start = min(max(start, 0), n - call.size)
        amp = call_amplitude_for_snr(x[start:start + call.size], snr_db)
        x[start:start + call.size] += amp * call
    else:
        extra = None if rng.random() < spec.confuser_frac else "white"
        x = _background(rng, SEGMENT_S, level, spec.noise_mix, extra)
    return x


def synth_dataset_waveforms(spec: SynthSpec) -> list[tuple[np.ndarray, int, float, float]]:
    """Raw draws behind :func:`synth_labeled_dataset`: (samples, label, timestamp, nominal_snr)."""
    if spec.n_pos + spec.n_neg == 0:
        raise DataError("synthetic dataset spec asks for zero samples")
    rng = np.random.default_rng(spec.seed)
    labels = np.array([1] * spec.n_pos + [0] * spec.n_neg)
    rng.shuffle(labels)
    out = []
    for i, label in enumerate(labels):
        snr = float(rng.uniform(*spec.snr_range)) if label else float("nan")
        out.append((synth_segment(rng, bool(label), snr, spec), int(label), i * SEGMENT_S, snr))
    return out


def synth_labeled_dataset(spec: SynthSpec) -> list[LabeledSample]:
    """Labelled 3-s spectrograms, timestamps 3 s apart in draw order."""
    source = f"synth{spec.seed}"
    return [
        LabeledSample(compute_spectrogram(AudioClip(x, SAMPLE_RATE, t, source)).values, label, t, snr, source)
        for x, label, t, snr in synth_dataset_waveforms(spec)
    ]


def synth_continuous(duration_s: float, call_times, snr_per_call, noise_mix: dict | None = None,
                     seed: int = 0, source_id: str = "synth_cont",
                     noise_level: float = 1.0) -> tuple[AudioClip, list[Annotation]]:
    """Continuous noise recording with 1-s upcalls starting at ``call_times``."""
    call_times = [float(t) for t in call_times]
    snr_per_call = np.broadcast_to(np.asarray(snr_per_call, dtype=float), (len(call_times),))
    order = np.argsort(call_times)
    for t in call_times:
        if t < 0 or t > duration_s - 1.0:
            raise DataError(f"call at {t} s does not fit inside the {duration_s} s recording")
    for a, b in zip(order[:-1], order[1:]):
        if call_times[b] < call_times[a] + 1.0:
            raise DataError(f"calls at {call_times[a]} s and {call_times[b]} s overlap")

    noise_mix = noise_mix or {"white": 1.0}
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    x = synth_noise("white", duration_s, noise_level, rng).samples
    for kind in ("tonal", "transient"):
        w = noise_mix.get(kind, 0.0)
        if w > 0:
            x = x + synth_noise(kind, duration_s, noise_level * w, rng).samples

    call = synth_upcall().samples
    annotations = []
    for t, snr in zip(call_times, snr_per_call):
        start = int(round(t * SAMPLE_RATE))
        amp = call_amplitude_for_snr(x[start:start + call.size], float(snr))
        x[start:start + call.size] += amp * call
        annotations.append(Annotation(source_id, t, t + 1.0, float(snr)))
    annotations.sort(key=lambda a: a.t_start)
    return AudioClip(x[:n], SAMPLE_RATE, 0.0, source_id), annotations
