import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inland_vtp.baselines import (TypicalProfile, closest_argmax, const_acc, const_vel, gmm_baseline,
                                  gmm_baseline_batch, lookup_ok, tp_baseline)
from inland_vtp.context import LookupParams, build_lookup
from inland_vtp.errors import ProfileGap
from inland_vtp.gmm import Gmm1D, GmmGrid
from inland_vtp.ingest import LabeledTrip
from inland_vtp.predictor.inference import rollout_km

HECTOS = range(5980, 6031)


def test_const_vel_repeats_last_step():
    p = const_vel([-12, -11, -10.5, -10, -10, -10], [0.2, 0.22, 0.24, 0.25, 0.25, 0.25])
    np.testing.assert_array_equal(p, np.tile([-10.0, 0.25], (5, 1)))
    np.testing.assert_allclose(rollout_km(600.0, 0.25, p[:, 1], "up"), 600 + 0.25 * np.arange(1, 6))


def test_const_acc_examples():
    p = const_acc(np.zeros(6), [0.1, 0.1, 0.1, 0.15, 0.20, 0.25])
    np.testing.assert_allclose(p[:, 1], [0.30, 0.35, 0.40, 0.45, 0.50])
    np.testing.assert_array_equal(p[:, 0], 0.0)
    clamp = const_acc(np.zeros(6), [0.1, 0.1, 0.1, 0.1, 0.09, 0.05])
    np.testing.assert_allclose(clamp[:, 1], [0.01, 0.0, 0.0, 0.0, 0.0], atol=1e-15)


@given(st.lists(st.floats(-80, 80), min_size=6, max_size=6), st.floats(0, 0.5))
def test_const_acc_without_change_is_const_vel(x, y):
    ys = [0.3, 0.2, 0.1, 0.4, y, y]
    np.testing.assert_array_equal(const_acc(x, ys), const_vel(x, ys))


def test_batch_shapes():
    x = np.random.default_rng(0).normal(size=(7, 6))
    assert const_vel(x, np.abs(x)).shape == (7, 5, 2)
    assert const_acc(x, np.abs(x)).shape == (7, 5, 2)


# -- typical profile -------------------------------------------------------------------------


def _profile():
    table = {("up", h): (-20.0 + 0.1 * (h - 5980), 0.25 + 0.001 * (h % 4), 50) for h in HECTOS}
    return TypicalProfile(table)


def test_tp_on_profile_returns_profile():
    prof = _profile()
    km = 598.3 + 0.25 * np.arange(6)
    tx, ty = prof.lookup("up", km)
    p = tp_baseline(km, tx, ty, "up", prof)
    k = km[-1] + ty[-1]
    for t in range(5):
        ex, ey = prof.lookup("up", [k])
        assert p[t, 0] == pytest.approx(ex[0]) and p[t, 1] == pytest.approx(ey[0])
        k += p[t, 1]


def test_tp_constant_offset_deviation():
    prof = _profile()
    km = 598.3 + 0.25 * np.arange(6)
    tx, ty = prof.lookup("up", km)
    p = tp_baseline(km, tx + 5.0, ty, "up", prof)
    kms = rollout_km(km[-1], ty[-1], p[:, 1], "up")
    np.testing.assert_allclose(p[:, 0], prof.lookup("up", kms)[0] + 5.0)
    unsigned = tp_baseline(km, tx + np.array([5, -5, 5, -5, 5, -5.0]), ty, "up", prof, signed=False)
    np.testing.assert_allclose(unsigned[:, 0], prof.lookup("up", kms)[0] - 5.0)


def test_tp_profile_gap():
    prof = _profile()
    km = 602.4 + 0.25 * np.arange(6)
    with pytest.raises(ProfileGap):
        tp_baseline(km, np.zeros(6), np.full(6, 0.25), "up", prof)
    with pytest.raises(ProfileGap):
        tp_baseline(km - 2.0, np.zeros(6), np.full(6, 0.25), "down", prof)


def test_profile_fit_means_and_round_trip(tmp_path):
    km = np.array([600.0, 600.01, 600.02, 600.3])
    trips = [LabeledTrip("a", "up", np.arange(4) * 60.0, km, np.array([1.0, 3.0, 5.0, 9.0]),
                         np.array([0.1, 0.2, 0.3, 0.4]), np.zeros(4), np.full(4, 1010.0), np.full(4, 1000.0), np.full(4, 3)),
             LabeledTrip("b", "up", np.arange(1) * 60.0, km[:1], np.array([7.0]), np.array([0.6]),
                         np.zeros(1), np.full(1, 1010.0), np.full(1, 1000.0), np.full(1, 3))]
    prof = TypicalProfile.fit(trips, min_samples=2)
    assert set(prof.table) == {("up", 6000)}
    o, s, n = prof.table[("up", 6000)]
    assert (o, s, n) == (pytest.approx(4.0), pytest.approx(0.3), 4)
    prof.save(tmp_path / "p.csv")
    assert TypicalProfile.load(tmp_path / "p.csv").table == prof.table
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "dir,hecto,typ_offset_m,typ_speed_kmmin,n"


# -- GMM mode tracking ------------------------------------------------------------------------


def test_closest_argmax_tie_rules():
    grid = np.arange(-100, 101, dtype=float)
    v = np.exp(-0.5 * ((grid + 30) / 5) ** 2) + np.exp(-0.5 * ((grid - 20) / 5) ** 2)
    assert closest_argmax(v, grid, -25.0)[0] == -30.0
    assert closest_argmax(v, grid, 10.0)[0] == 20.0
    assert closest_argmax(v, grid, -5.0)[0] == -30.0  # equidistant: smaller value
    uneven = v + 0.01 * np.exp(-0.5 * ((grid - 20) / 5) ** 2)
    assert closest_argmax(uneven, grid, -29.0)[0] == 20.0


def _mode(h):
    return -30.0 + (h % 3)


def _mode_lookup():
    lat = {("up", 1000, h): Gmm1D([1.0], [_mode(h)], [36.0], "distinct") for h in HECTOS}
    lon = {("up", 1000, h, ln): Gmm1D([1.0], [0.3], [4e-4], "distinct") for h in HECTOS for ln in (1, 2, 3, 4)}
    return build_lookup(GmmGrid("lateral", lat, {}), GmmGrid("longitudinal", lon, {}), (598.0, 603.0),
                        LookupParams(H=2))


def test_gmm_baseline_tracks_mode_curve():
    lookup = _mode_lookup()
    km = 598.0 + 0.3 * np.arange(6)
    x = np.array([_mode(round(k * 10)) for k in km])
    p = gmm_baseline(km, x, np.full(6, 0.3), "up", 1000, 3, lookup)
    kms = km[-1] + 0.3 * np.arange(1, 6)
    np.testing.assert_allclose(p[:, 0], [_mode(round(k * 10)) for k in kms])
    np.testing.assert_allclose(p[:, 1], 0.3)
    shifted = gmm_baseline(km, x + 4.0, np.full(6, 0.3), "up", 1000, 3, lookup)
    np.testing.assert_allclose(shifted[:, 0], p[:, 0] + 4.0)


def test_gmm_baseline_batch_matches_single():
    lookup = _mode_lookup()
    r = np.random.default_rng(2)
    km = 598.2 + r.uniform(0, 1, (6, 1)) + 0.25 * np.arange(6)
    x = r.uniform(-40, -20, (6, 6))
    y = r.uniform(0.2, 0.35, (6, 6))
    batch = gmm_baseline_batch(km, x, y, "up", np.full(6, 1000.0), np.full(6, 3), lookup)
    for i in range(6):
        np.testing.assert_allclose(batch[i], gmm_baseline(km[i], x[i], y[i], "up", 1000, 3, lookup))
    assert lookup_ok(lookup, "up", 1250, 3) and not lookup_ok(lookup, "up", 2000, 3)


@settings(max_examples=40, deadline=None)
@given(st.floats(598.0, 603.0))
def test_grid_argmax_matches_dense_argmax(km):
    lookup = _mode_lookup()
    row = lookup.sample_p_lat("up", 1000, km)
    grid_arg = closest_argmax(row, lookup.params.offsets, 0.0)[0]
    dense = np.linspace(-60, 0, 6001)
    vals = lookup.lat[("up", 1000)].rows([km], dense)[0]
    assert abs(grid_arg - dense[np.argmax(vals)]) <= 1.0 / lookup.params.r_d
