import numpy as np
import pytest
from hypothesis import given, strategies as st

from cases import random_match_case
from oracles import match_oracle
from upcall.detector import DetectionEvent, ScoreSeries
from upcall.errors import DataError
from upcall.evaluation import (Annotation, EvalReport, LabeledSample, MatchCounts, classification_f1,
                               compute_metrics, f1_score, match_events, merge_intervals, read_annotations,
                               snr_filtered_counts, snr_filtered_metrics, sum_counts, threshold_sweep,
                               time_split, write_annotations, write_curve_csv, write_report_csv)


def ev(core_start, core_end, buffer=1.0, sid="s"):
    return DetectionEvent(core_start - buffer, core_end + buffer, core_start, core_end, 1.0, sid)


# ---- chronological split

def _samples(times):
    return [LabeledSample(np.zeros((2, 2)), i % 2, float(t)) for i, t in enumerate(times)]


def test_split_sizes_and_order():
    split = time_split(_samples(range(100)))
    assert len(split.train) == 85 and len(split.test) == 15
    assert max(s.timestamp for s in split.train) < min(s.timestamp for s in split.test)
    assert split.t0 == 85.0 and split.gap == 1.0


def test_split_keeps_shared_timestamps_together():
    times = [0] * 50 + [1] * 40 + [2] * 10
    split = time_split(_samples(times))
    assert {s.timestamp for s in split.train} == {0.0, 1.0} and len(split.test) == 10


def test_split_reports_gap():
    split = time_split(_samples(list(range(85)) + [1000 + i for i in range(15)]))
    assert split.gap == 1000 - 84


def test_split_needs_two_timestamps():
    with pytest.raises(DataError):
        time_split(_samples([5.0] * 10))


@given(st.lists(st.integers(0, 50), min_size=2, max_size=80).filter(lambda t: len(set(t)) > 1))
def test_split_is_chronological(times):
    split = time_split(_samples(times))
    assert split.train and split.test
    assert max(s.timestamp for s in split.train) < min(s.timestamp for s in split.test)


# ---- matching

def test_partial_overlap_detected():
    counts = match_events([Annotation("s", 10.0, 11.0)], [DetectionEvent(10.5, 12.0, 10.5, 12.0, 0.9, "s")])
    assert counts.tp_ann == 1 and counts.fn == 0


def test_buffer_helps_annotation_side_only():
    # core [13, 14] misses [11.5, 12.5]; buffered [12, 15] covers half of it
    counts = match_events([Annotation("s", 11.5, 12.5)], [ev(13.0, 14.0)])
    assert counts == MatchCounts(1, 0, 0, 1)


def test_union_of_events_counts():
    ann = [Annotation("s", 10.0, 14.0)]
    events = [DetectionEvent(10.0, 11.0, 10.0, 11.0, 1, "s"), DetectionEvent(11.0, 12.0, 11.0, 12.0, 1, "s")]
    assert match_events(ann, events).tp_ann == 1
    assert match_events(ann, events[:1]).tp_ann == 0


def test_empty_inputs():
    assert match_events([], []) == MatchCounts(0, 0, 0, 0)
    assert match_events([Annotation("s", 1, 2)], []) == MatchCounts(0, 1, 0, 0)
    assert match_events([], [ev(1, 2)]) == MatchCounts(0, 0, 0, 1)


def test_matching_against_cell_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        anns, events = random_match_case(rng)
        c = match_events(anns, events)
        assert (c.tp_ann, c.fn, c.tp_evt, c.fp) == match_oracle(anns, events)


@given(st.integers(0, 10 ** 6), st.integers(-400, 400))
def test_matching_translation_invariant(seed, shift_q):
    anns, events = random_match_case(np.random.default_rng(seed))
    d = shift_q * 0.25
    moved_a = [Annotation(a.source_id, a.t_start + d, a.t_end + d, a.snr) for a in anns]
    moved_e = [DetectionEvent(e.t_start + d, e.t_end + d, e.core_start + d, e.core_end + d, 1.0, "s") for e in events]
    assert match_events(anns, events) == match_events(moved_a, moved_e)


def test_merge_intervals():
    assert merge_intervals([(3, 4), (0, 1), (1, 2), (2.5, 3.5)]) == [(0, 2), (2.5, 4)]


# ---- metrics

def test_f1_from_precision_and_recall():
    assert f1_score(0.902, 0.875) == pytest.approx(0.888, abs=5e-4)
    assert f1_score(0.0, 0.0) == 0.0
    assert f1_score(None, 0.5) is None


def test_metrics_rates_and_conventions():
    r = compute_metrics(MatchCounts(8, 2, 7, 5), 1.0)
    assert (r.recall, r.precision, r.fpr) == (0.8, 7 / 12, 5.0)
    assert compute_metrics(MatchCounts(0, 0, 0, 10), 2.0).recall is None
    empty = compute_metrics(MatchCounts(0, 3, 0, 0), 1.0)
    assert empty.precision is None and empty.f1 is None and empty.fpr == 0.0
    with pytest.raises(DataError):
        compute_metrics(MatchCounts(1, 0, 1, 0), 0.0)


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_within_bounds(tp_a, fn, tp_e, fp):
    r = compute_metrics(MatchCounts(tp_a, fn, tp_e, fp), 1.0)
    if r.f1 is not None:
        assert 0.0 <= r.f1 <= 1.0
        assert min(r.precision, r.recall) - 1e-12 <= r.f1 <= max(r.precision, r.recall) + 1e-12


def test_sum_counts():
    assert sum_counts([MatchCounts(1, 2, 3, 4), MatchCounts(10, 20, 30, 40)]) == MatchCounts(11, 22, 33, 44)


def test_classification_f1():
    assert classification_f1([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
    assert classification_f1([0, 0], [0, 0]) == 0.0


# ---- SNR filtering

def test_filter_below_everything_is_identity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        anns, events = random_match_case(rng)
        counts, retained = snr_filtered_counts(anns, events, -100.0)
        assert counts == match_events(anns, events) and retained == len(anns)


def test_filter_above_everything_leaves_recall_undefined():
    anns = [Annotation("s", 1, 2, 3.0), Annotation("s", 5, 6, 9.0)]
    r = snr_filtered_metrics(anns, [ev(1, 2)], 50.0, 1.0)
    assert r.recall is None and r.retained == 0
    assert r.fp == 0  # the event sits on a removed call


def test_filter_against_oracle():
    rng = np.random.default_rng(2)
    for _ in range(500):
        anns, events = random_match_case(rng)
        snr_min = float(rng.integers(-5, 20))
        c, retained = snr_filtered_counts(anns, events, snr_min)
        assert (c.tp_ann, c.fn, c.tp_evt, c.fp) == match_oracle(anns, events, snr_min=snr_min)
        assert retained == sum(a.snr > snr_min for a in anns)


def test_filter_is_strictly_greater():
    anns = [Annotation("s", 1, 2, 8.0)]
    assert snr_filtered_counts(anns, [], 8.0)[1] == 0
    assert snr_filtered_counts(anns, [], 7.999)[1] == 1


def test_filter_needs_snr():
    with pytest.raises(DataError, match="no SNR"):
        snr_filtered_counts([Annotation("s", 1, 2)], [], 0.0)


@given(st.integers(0, 10 ** 6), st.floats(-5, 20), st.floats(-5, 20))
def test_retained_count_non_increasing(seed, s1, s2):
    anns, events = random_match_case(np.random.default_rng(seed))
    lo, hi = min(s1, s2), max(s1, s2)
    assert snr_filtered_counts(anns, events, hi)[1] <= snr_filtered_counts(anns, events, lo)[1]


# ---- threshold sweep

def _series():
    x = np.zeros(200)
    x[40:46] = [0.3, 0.6, 0.9, 0.9, 0.6, 0.3]
    x[120:123] = 0.5
    return ScoreSeries(x, 0.5, 0.0, "s")


def test_sweep_recall_non_increasing():
    series = _series()
    anns = [Annotation("s", 20.0, 23.0), Annotation("s", 80.0, 81.0)]
    reports = threshold_sweep(anns, series, np.round(np.arange(0.0, 1.01, 0.05), 2))
    recalls = [r.recall for r in reports]
    assert all(b <= a for a, b in zip(recalls, recalls[1:]))
    assert reports[0].threshold == 0.0 and reports[-1].tp_evt + reports[-1].fp == 0
    assert reports[0].duration_h == pytest.approx((199 * 0.5 + 3.0) / 3600)  # through the last window


def test_sweep_errors():
    with pytest.raises(DataError):
        threshold_sweep([], _series(), [])
    with pytest.raises(DataError):
        threshold_sweep([], _series(), [0.5, 0.2])


def test_sweep_with_snr_filter():
    anns = [Annotation("s", 20.0, 23.0, 12.0), Annotation("s", 60.0, 61.0, 1.0)]
    [r] = threshold_sweep(anns, _series(), [0.2], snr_min=5.0)
    assert r.retained == 1 and r.recall == 1.0


# ---- CSV

def test_annotations_round_trip(tmp_path):
    anns = [Annotation("a", 1.25, 2.5, 7.125), Annotation("b", 0.1, 0.30000000000000004, None)]
    write_annotations(tmp_path / "a.csv", anns)
    assert read_annotations(tmp_path / "a.csv") == anns


def test_annotations_without_snr_column(tmp_path):
    (tmp_path / "a.csv").write_text("source_id,t_start,t_end\nx,1,2\n\n")
    assert read_annotations(tmp_path / "a.csv") == [Annotation("x", 1.0, 2.0, None)]


@pytest.mark.parametrize("body,line", [("x,1\n", 2), ("x,1,2\ny,3,3\n", 3), ("x,a,2\n", 2)])
def test_annotation_errors_name_the_line(tmp_path, body, line):
    (tmp_path / "a.csv").write_text("source_id,t_start,t_end\n" + body)
    with pytest.raises(DataError, match=f":{line}:"):
        read_annotations(tmp_path / "a.csv")


def test_annotation_header_and_missing_file(tmp_path):
    (tmp_path / "a.csv").write_text("id,start,end\n")
    with pytest.raises(DataError, match=":1:"):
        read_annotations(tmp_path / "a.csv")
    with pytest.raises(DataError):
        read_annotations(tmp_path / "nope.csv")


def test_report_and_curve_csv(tmp_path):
    r = compute_metrics(MatchCounts(3, 1, 2, 2), 0.5, threshold=0.4)
    write_report_csv(tmp_path / "r.csv", [r])
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["threshold,recall,precision,fpr,f1,tp,fp,fn",
                     "0.400000,0.750000,0.500000,4.000000,0.600000,3,2,1"]
    write_curve_csv(tmp_path / "c.csv", [r, compute_metrics(MatchCounts(0, 4, 0, 0), 0.5)], "recall", "precision")
    assert (tmp_path / "c.csv").read_text() == "recall,precision\n0.750000,0.500000\n0.000000,\n"


def test_report_summary_text():
    text = compute_metrics(MatchCounts(3, 1, 2, 2), 0.5).summary()
    assert "75.0%" in text and "4.00 per hour" in text
    assert isinstance(compute_metrics(MatchCounts(3, 1, 2, 2), 0.5), EvalReport)
