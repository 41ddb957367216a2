import numpy as np
import pytest
from hypothesis import given, strategies as st

from upcall.errors import DataError
from upcall.signal import Spectrogram, compute_spectrogram
from upcall.snr import estimate_snr
from upcall.synth import (SynthSpec, band_power, call_amplitude_for_snr, call_amplitude_for_trace_snr,
                          synth_continuous, synth_dataset_waveforms, synth_labeled_dataset, synth_noise, synth_upcall, trace_snr)


def test_upcall_basics():
    clip = synth_upcall()
    assert len(clip) == 1000 and clip.sample_rate == 1000
    assert np.max(np.abs(clip.samples)) == pytest.approx(1.0, abs=1e-3)
    assert np.all(synth_upcall(amplitude=0.0).samples == 0)


def test_upcall_midpoint_frequency():
    x = synth_upcall().samples[372:628] * np.hamming(256)  # centred on t = 0.5 s
    assert np.argmax(np.abs(np.fft.rfft(x))) == 38


def test_upcall_ramps():
    x = synth_upcall(amplitude=2.0).samples
    assert abs(x[0]) < 1e-12
    assert np.max(np.abs(x[:50])) < 2.0 and np.max(np.abs(x[100:900])) > 1.9


@pytest.mark.parametrize("f0,f1,rate", [(200, 100, 1000), (100, 600, 1000)])
def test_upcall_rejects_bad_sweep(f0, f1, rate):
    with pytest.raises(ValueError):
        synth_upcall(f0=f0, f1=f1, sample_rate=rate)


@pytest.mark.parametrize("kind", ["white", "tonal", "transient"])
def test_noise_level_and_silence(kind):
    x = synth_noise(kind, 10.0, 0.7, 1).samples
    assert len(x) == 10000
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(0.7, rel=0.02)
    assert np.all(synth_noise(kind, 1.0, 0.0, 1).samples == 0)


def test_noise_errors():
    with pytest.raises(ValueError):
        synth_noise("pink", 1.0, 1.0)
    with pytest.raises(ValueError):
        synth_noise("white", 0.0, 1.0)


def test_tonal_noise_has_few_persistent_rows():
    for seed in range(10):
        spec = compute_spectrogram(synth_noise("tonal", 10.0, 1.0, seed)).values
        col_median = np.median(spec, axis=0)
        peaks = [j for j in range(1, 128) if col_median[j] > col_median[j - 1] and col_median[j] >= col_median[j + 1]
                 and col_median[j] > np.median(col_median) + 40]
        assert 1 <= len(peaks) <= 3


def test_white_noise_band_power():
    x = synth_noise("white", 100.0, 1.0, 3).samples
    assert band_power(x) == pytest.approx(120 / 500, rel=0.1)  # band share of a flat spectrum


def test_band_power_calibration_is_exact():
    noise = np.random.default_rng(0).standard_normal(1000)
    amp = call_amplitude_for_snr(noise, 7.0)
    call = amp * synth_upcall().samples
    assert 10 * np.log10(np.mean(call ** 2) / band_power(noise)) == pytest.approx(7.0, abs=1e-9)


def test_trace_calibration_hits_target():
    x = np.random.default_rng(1).standard_normal(3000)
    amp = call_amplitude_for_trace_snr(x, 900, 6.0)
    assert trace_snr(x, amp * synth_upcall().samples, 900) == pytest.approx(6.0, abs=1e-3)


def test_dataset_counts_balance_and_determinism():
    spec = SynthSpec(n_pos=10, n_neg=10, seed=4)
    a, b = synth_labeled_dataset(spec), synth_labeled_dataset(spec)
    assert len(a) == 20 and sum(s.label for s in a) == 10
    assert all(s.spectrogram.shape == (94, 129) for s in a)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.spectrogram, y.spectrogram)
        assert x.label == y.label and x.timestamp == y.timestamp
    assert all(np.isnan(s.snr) for s in a if s.label == 0)
    assert all(5 <= s.snr <= 15 for s in a if s.label == 1)
    assert [s.timestamp for s in a] == [3.0 * i for i in range(20)]


def test_dataset_different_seeds_differ():
    a = synth_labeled_dataset(SynthSpec(n_pos=2, n_neg=2, seed=1))
    b = synth_labeled_dataset(SynthSpec(n_pos=2, n_neg=2, seed=2))
    assert any(not np.array_equal(x.spectrogram, y.spectrogram) for x, y in zip(a, b))


def test_estimated_snr_tracks_nominal():
    data = synth_labeled_dataset(SynthSpec(n_pos=200, n_neg=0, snr_range=(0, 15), seed=1))
    est = [estimate_snr(Spectrogram(s.spectrogram)) for s in data]
    assert np.corrcoef(est, [s.snr for s in data])[0, 1] >= 0.8


@pytest.mark.parametrize("kwargs", [dict(n_pos=-1), dict(jitter_max=1.5), dict(noise_mix={"white": -1}),
                                    dict(noise_mix={"pink": 1}), dict(snr_range=(10, 5))])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_empty_spec_rejected():
    with pytest.raises(DataError):
        synth_labeled_dataset(SynthSpec(n_pos=0, n_neg=0))


@given(st.integers(0, 10 ** 6), st.floats(0.0, 1.0))
def test_call_stays_inside_segment(seed, jitter):
    # a loud call against a quiet floor: the energy envelope locates it
    spec = SynthSpec(n_pos=1, n_neg=0, snr_range=(40, 40), jitter_max=jitter, noise_mix={"white": 1.0}, seed=seed)
    x = synth_dataset_waveforms(spec)[0][0]
    loud = np.flatnonzero(np.abs(x) > 0.5 * np.abs(x).max())
    assert loud.min() >= 0 and loud.max() < 3000
    centre = (loud.min() + loud.max()) / 2 / 1000
    assert abs(centre - 1.5) <= jitter + 0.06


def test_continuous_construction():
    times = np.arange(30) * 19.0 + 5.0
    clip, ann = synth_continuous(600.0, times, 10.0, seed=2)
    assert len(clip) == 600000 and clip.sample_rate == 1000
    assert len(ann) == 30
    assert all(a.t_end - a.t_start == 1.0 and a.snr == 10.0 for a in ann)
    assert all(b.t_start >= a.t_end for a, b in zip(ann, ann[1:]))


def test_continuous_zero_calls_is_noise():
    clip, ann = synth_continuous(20.0, [], [], seed=3)
    assert ann == []
    assert np.sqrt(np.mean(clip.samples ** 2)) == pytest.approx(1.0, rel=0.05)


@pytest.mark.parametrize("times", [[5.0, 5.5], [-1.0], [19.5]])
def test_continuous_rejects_bad_times(times):
    with pytest.raises(DataError):
        synth_continuous(20.0, times, 10.0)


def test_continuous_deterministic():
    a, _ = synth_continuous(30.0, [3.0, 10.0], [5.0, 9.0], {"white": 1, "tonal": 0.5, "transient": 0.5}, seed=9)
    b, _ = synth_continuous(30.0, [3.0, 10.0], [5.0, 9.0], {"white": 1, "tonal": 0.5, "transient": 0.5}, seed=9)
    np.testing.assert_array_equal(a.samples, b.samples)
