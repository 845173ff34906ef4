import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inland_vtp.errors import GaugeGap, TooShort
from inland_vtp.ingest import (GaugeSeries, LabeledTrip, RawTrip, annotate, bin_discharge, hecto_index,
                               read_gauges_csv, read_labeled_jsonl, read_trips_jsonl, resample_1min,
                               sample_sequences, split_ratio_counts, split_trips, windows_of,
                               write_gauges_csv, write_labeled_jsonl, write_trips_jsonl)


def _track(t):
    t = np.asarray(t, dtype=float)
    return np.column_stack([4.0 * t, np.zeros_like(t)])


def test_split_trips_cases():
    t = np.array([0.0, 1200.0])
    assert split_trips([("v", t, _track(t))]) == []
    t = np.arange(0, 1801, 60.0)
    assert len(split_trips([("v", t, _track(t))])) == 1
    t = np.concatenate([np.arange(0, 601, 60.0), np.arange(1800, 2401, 60.0)])
    trips = split_trips([("v", t, _track(t))])
    assert len(trips) == 2 and trips[1].t[0] == 1800.0


def test_split_on_direction_reversal(straight):
    t = np.arange(0, 1201, 60.0)
    x = np.concatenate([np.linspace(100, 1100, 11), np.linspace(1000, 100, 10)])
    trips = split_trips([("v", t, np.column_stack([x, np.zeros_like(x)]))], geom=straight)
    assert len(trips) == 2


def test_resample_linear_motion_is_exact():
    t = np.array([0.0, 37.0, 95.0, 160.0, 250.0, 301.0])
    tr = resample_1min(RawTrip("a", t, np.column_stack([3.0 * t + 5, -2.0 * t])))
    assert np.all(np.diff(tr.t) == 60.0)
    np.testing.assert_allclose(tr.xy[:, 0], 3.0 * tr.t + 5, rtol=1e-12)
    np.testing.assert_allclose(tr.xy[:, 1], -2.0 * tr.t, rtol=1e-12, atol=1e-9)


def test_resample_quadratic_is_exact():
    t = np.arange(0, 601, 30.0)
    f = lambda s: 1000.0 + 2.0 * s + 0.01 * s**2  # noqa: E731
    tr = resample_1min(RawTrip("a", t, np.column_stack([f(t), 0.5 * f(t)])))
    np.testing.assert_allclose(tr.xy[:, 0], f(tr.t), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(5.0, 90.0), min_size=4, max_size=20), st.floats(-1, 1), st.floats(-0.01, 0.01))
def test_resample_quadratic_property(gaps, b, c):
    t = np.concatenate([[0.0], np.cumsum(gaps)])
    if t[-1] < 120:
        return
    f = lambda s: 50.0 + b * s + c * s**2  # noqa: E731
    tr = resample_1min(RawTrip("a", t, np.column_stack([f(t), f(t)])))
    np.testing.assert_allclose(tr.xy[:, 0], f(tr.t), rtol=1e-9, atol=1e-8)


def test_resample_too_short():
    with pytest.raises(TooShort):
        resample_1min(RawTrip("a", [0.0, 45.0, 90.0], [[0, 0], [1, 0], [2, 0]]))


def test_binning_and_hectometers():
    np.testing.assert_array_equal(bin_discharge([1120.0, 1125.0, 1124.99, 0.0]), [1000, 1250, 1000, 0])
    assert hecto_index(598.63) == 5986
    assert hecto_index(598.65) == 5987


def test_gauge_reading_rules():
    g = GaugeSeries([0.0, 900.0], [1000.0, 1200.0])
    np.testing.assert_array_equal(g.reading_at([0.0, 899.0, 900.0, 5000.0]), [1000, 1000, 1200, 1200])
    with pytest.raises(GaugeGap):
        g.reading_at([-1.0])
    with pytest.raises(GaugeGap):
        g.reading_at([900.0 + 86400.0 + 1])


def test_annotate_speeds_and_labels(straight):
    t = np.arange(0, 601, 60.0)
    xy = np.column_stack([250.0 * np.arange(11), np.full(11, 10.0)])  # 0.25 km/min, 10 m left
    g = GaugeSeries([-100.0], [1125.0])
    lab = annotate(resample_1min(RawTrip("a", t, xy, dir="up")), straight, g)
    assert len(lab) == 10
    np.testing.assert_allclose(lab.y, 0.25, atol=1e-9)
    np.testing.assert_allclose(lab.offset, -10.0, atol=1e-9)
    assert np.all(lab.q_bin == 1250.0) and np.all(lab.lane == 2) and lab.dir == "up"
    np.testing.assert_allclose(lab.km[:2], [600.0, 600.25], atol=1e-12)

    down = annotate(resample_1min(RawTrip("b", t, xy[::-1].copy())), straight, g)
    assert down.dir == "down"
    np.testing.assert_allclose(down.y, 0.25, atol=1e-9)
    np.testing.assert_allclose(down.offset, 10.0, atol=1e-9)


def _labeled(tid, n):
    z = np.zeros(n)
    return LabeledTrip(tid, "up", 60.0 * np.arange(n), 600 + 0.25 * np.arange(n), z, z + 0.25, z,
                       z + 1000.0, z + 1000.0, np.full(n, 3))


def test_windows_and_splits():
    assert len(windows_of(_labeled("a", 25), 11)) == 2
    assert split_ratio_counts(10) == (8, 1, 1)
    trips = [_labeled(f"t{i}", 30) for i in range(10)]
    a = sample_sequences(trips, 11, seed=3)
    b = sample_sequences(trips, 11, seed=3)
    assert {k: len({w.trip_id for w in v}) for k, v in a.items()} == {"train": 8, "val": 1, "test": 1}
    for k in a:
        assert [(w.trip_id, w.start) for w in a[k]] == [(w.trip_id, w.start) for w in b[k]]


def test_windows_skip_non_finite():
    tr = _labeled("a", 22)
    tr.y[15] = np.nan
    assert [w.start for w in windows_of(tr, 11)] == [0]


def test_file_round_trips(tmp_path):
    t = np.arange(0, 181, 60.0)
    raw = [RawTrip("x", t, _track(t), dir="up")]
    write_trips_jsonl(raw, tmp_path / "t.jsonl")
    back = read_trips_jsonl(tmp_path / "t.jsonl")
    np.testing.assert_array_equal(back[0].xy, raw[0].xy)
    g = GaugeSeries([0.0, 900.0], [1000.5, 1100.25])
    write_gauges_csv(g, tmp_path / "g.csv")
    np.testing.assert_array_equal(read_gauges_csv(tmp_path / "g.csv").q, g.q)
    lab = [_labeled("a", 5)]
    write_labeled_jsonl(lab, tmp_path / "l.jsonl")
    np.testing.assert_array_equal(read_labeled_jsonl(tmp_path / "l.jsonl")[0].km, lab[0].km)


def test_missing_gauge_file(tmp_path):
    with pytest.raises(GaugeGap):
        read_gauges_csv(tmp_path / "none.csv")
