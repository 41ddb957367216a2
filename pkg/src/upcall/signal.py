"""Audio ingestion, resampling, framing and spectrograms.

All spectrograms in the package use the same axis convention: rows are time
slices, columns are frequency slices.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import DataError

SAMPLE_RATE = 1000
WINDOW_S = 0.256
STEP_S = 0.032
NFFT = 256
DB_FLOOR_EPS = 1e-12
DB_FLOOR = 20.0 * math.log10(DB_FLOOR_EPS)

SEGMENT_S = 3.0
SEGMENT_SHAPE = (94, 129)

_SPEC_MAGIC = b"SPEC"
_SPEC_HEADER = struct.Struct("<4sIIddd")


class WavFormatError(DataError):
    """Malformed RIFF/WAVE structure."""


class UnsupportedEncodingError(DataError):
    """WAV encoding other than 16/24-bit integer PCM or 32-bit float."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size

    def scaled(self, gain: float) -> AudioClip:
        return replace(self, samples=self.samples * gain)


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray
    time_step: float = STEP_S
    freq_step: float = SAMPLE_RATE / NFFT
    start_time: float = 0.0
    f_min: float = 0.0
    source_id: str = field(default="", compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"spectrogram values must be a non-empty 2-D matrix, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def duration(self) -> float:
        return self.values.shape[0] * self.time_step

    def freq_columns(self, f_lo: float, f_hi: float) -> slice:
        """Column slice covering frequencies in the closed band [f_lo, f_hi]."""
        lo = max(0, math.ceil((f_lo - self.f_min) / self.freq_step - 1e-9))
        hi = min(self.values.shape[1] - 1, math.floor((f_hi - self.f_min) / self.freq_step + 1e-9))
        return slice(lo, hi + 1)

    def time_slices(self, seconds: float) -> int:
        return int(round(seconds / self.time_step))


def read_wav(path) -> AudioClip:
    """Read a little-endian PCM WAV file, keeping only the first channel.

    Integer PCM is scaled by 2**(bits-1) so amplitudes fall in [-1, 1].
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such WAV file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == 0xFFFE and len(body) >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the real format tag opens the subformat GUID
                (sub_tag,) = struct.unpack_from("<H", body, 24)
                fmt = (sub_tag,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise WavFormatError(f"{path}: bad header (channels={channels}, rate={rate})")

    if tag == 1 and bits == 16:
        raw = np.frombuffer(payload[: len(payload) // 2 * 2], dtype="<i2").astype(np.float64)
        raw /= 2.0 ** 15
    elif tag == 1 and bits == 24:
        b = np.frombuffer(payload[: len(payload) // 3 * 3], dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        raw = ints.astype(np.float64) / 2.0 ** 23
    elif tag == 3 and bits == 32:
        raw = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported encoding (format tag {tag}, {bits} bits)")

    n_frames = raw.size // channels
    if n_frames == 0:
        raise WavFormatError(f"{path}: data chunk holds no samples")
    samples = raw[: n_frames * channels].reshape(n_frames, channels)[:, 0]
    return AudioClip(samples, float(rate), 0.0, path.stem)


def write_wav(path, clip: AudioClip, bits: int = 16) -> None:
    """Write a mono PCM WAV (16-bit integer or 32-bit float)."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if bits == 16:
        tag = 1
        payload = np.clip(np.round(x * 2 ** 15), -(2 ** 15), 2 ** 15 - 1).astype("<i2").tobytes()
    elif bits == 32:
        tag = 3
        payload = x.astype("<f4").tobytes()
    else:
        raise ValueError("bits must be 16 or 32")
    rate = int(round(clip.sample_rate))
    block = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, tag, 1, rate, rate * block, block, bits)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


def design_antialias_filter(src_rate: float, target_rate: float, up: int,
                            attenuation_db: float = 80.0) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for a polyphase resampler.

    The passband edge sits at 0.45 of the lower of the two rates and the stopband
    starts at its Nyquist frequency.
    """
    low_rate = min(src_rate, target_rate)
    fs = src_rate * up
    pass_edge = 0.45 * low_rate
    stop_edge = 0.5 * low_rate
    numtaps, beta = sps.kaiserord(attenuation_db, (stop_edge - pass_edge) / (fs / 2))
    numtaps |= 1
    return sps.firwin(numtaps, (pass_edge + stop_edge) / 2, window=("kaiser", beta), fs=fs)


def resample(clip: AudioClip, target_rate: float) -> AudioClip:
    if not target_rate > 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    ratio = Fraction(target_rate / clip.sample_rate).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    h = design_antialias_filter(clip.sample_rate, target_rate, up)
    y = sps.resample_poly(clip.samples, up, down, window=h)
    n_out = int(round(clip.samples.size * target_rate / clip.sample_rate))
    if y.size < n_out:
        y = np.pad(y, (0, n_out - y.size))
    return replace(clip, samples=y[:n_out], sample_rate=float(target_rate))


def n_frames(n_samples: int, window_n: int, hop_n: int) -> int:
    if window_n > n_samples:
        return 0
    return (n_samples - window_n) // hop_n + 1


def frame_stream(clip: AudioClip, window_s: float, hop_s: float) -> list[AudioClip]:
    """Cut a clip into fixed-length windows; a trailing remainder is dropped."""
    if not hop_s > 0:
        raise ValueError(f"hop must be positive, got {hop_s}")
    window_n = int(round(window_s * clip.sample_rate))
    hop_n = int(round(hop_s * clip.sample_rate))
    if window_n < 1 or hop_n < 1:
        raise ValueError("window and hop must each span at least one sample")
    if window_n > clip.samples.size:
        raise DataError(f"window of {window_s} s is longer than the {clip.duration:.3f} s clip")
    count = n_frames(clip.samples.size, window_n, hop_n)
    return [
        AudioClip(clip.samples[i * hop_n:i * hop_n + window_n], clip.sample_rate,
                  clip.start_time + i * hop_n / clip.sample_rate, clip.source_id)
        for i in range(count)
    ]


def frame_matrix(samples: np.ndarray, window_n: int, hop_n: int) -> np.ndarray:
    """Strided (n_frames, window_n) view over a 1-D array."""
    view = np.lib.stride_tricks.sliding_window_view(samples, window_n)
    return view[::hop_n]


def _stft_db(samples: np.ndarray) -> np.ndarray:
    """dB magnitude STFT of one or more equal-length signals (last axis = time)."""
    window_n = int(round(WINDOW_S * SAMPLE_RATE))
    step_n = int(round(STEP_S * SAMPLE_RATE))
    n = samples.shape[-1]
    n_slices = math.ceil(n / step_n)
    padded_len = (n_slices - 1) * step_n + window_n
    pad = [(0, 0)] * (samples.ndim - 1) + [(0, padded_len - n)]
    padded = np.pad(samples, pad)
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_n, axis=-1)[..., ::step_n, :]
    spectrum = np.fft.rfft(frames * np.hamming(window_n), n=NFFT, axis=-1)
    return 20.0 * np.log10(np.maximum(np.abs(spectrum), DB_FLOOR_EPS))


def _check_spectrogram_input(clip: AudioClip) -> None:
    if clip.sample_rate != SAMPLE_RATE:
        raise DataError(f"spectrogram needs {SAMPLE_RATE} Hz input, got {clip.sample_rate} Hz; resample first")
    if clip.samples.size < int(round(WINDOW_S * SAMPLE_RATE)):
        raise DataError(f"clip of {clip.duration:.3f} s is shorter than the {WINDOW_S} s analysis window")


def compute_spectrogram(clip: AudioClip) -> Spectrogram:
    """Hamming-windowed STFT in dB (0.256 s window, 0.032 s step, 1000 Hz input).

    The signal is zero-padded at the end so a clip of n samples yields
    ceil(n / 32) time slices; a 3-s clip gives a 94x129 matrix.
    """
    _check_spectrogram_input(clip)
    values = _stft_db(clip.samples)
    return Spectrogram(values, STEP_S, SAMPLE_RATE / NFFT, clip.start_time, 0.0, clip.source_id)


def spectrogram_batch(clips: list[AudioClip]) -> np.ndarray:
    """Stack of spectrogram matrices for equal-length clips, shape (B, T, F)."""
    for clip in clips:
        _check_spectrogram_input(clip)
    lengths = {c.samples.size for c in clips}
    if len(lengths) != 1:
        raise ValueError("spectrogram_batch needs clips of equal length")
    return _stft_db(np.stack([c.samples for c in clips]))


def denoise(spec: Spectrogram) -> Spectrogram:
    """Subtract each time slice's median, then each frequency slice's median."""
    x = spec.values
    row_removed = x - np.median(x, axis=1, keepdims=True)
    out = row_removed - np.median(row_removed, axis=0, keepdims=True)
    return replace(spec, values=out)


def save_spectrogram(path, spec: Spectrogram) -> None:
    t, f = spec.values.shape
    header = _SPEC_HEADER.pack(_SPEC_MAGIC, t, f, spec.time_step, spec.freq_step, spec.start_time)
    Path(path).write_bytes(header + spec.values.astype("<f4").tobytes(order="C"))


def load_spectrogram(path) -> Spectrogram:
    data = Path(path).read_bytes()
    if len(data) < _SPEC_HEADER.size:
        raise DataError(f"{path}: truncated spectrogram header")
    magic, t, f, time_step, freq_step, start_time = _SPEC_HEADER.unpack_from(data)
    if magic != _SPEC_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = data[_SPEC_HEADER.size:]
    if len(body) != 4 * t * f:
        raise DataError(f"{path}: expected {t}x{f} float32 values, found {len(body)} bytes")
    values = np.frombuffer(body, dtype="<f4").reshape(t, f).astype(np.float64)
    return Spectrogram(values, time_step, freq_step, start_time)
