import numpy as np
import pytest
from scipy.integrate import quad

from inland_vtp.context import LookupDict, LookupParams, build_lookup, hecto_knots
from inland_vtp.errors import EmptyKey, LookupFailure
from inland_vtp.gmm import Gmm1D, GmmGrid


def _lat_model(h, q=1000):
    mu = -30.0 + 0.5 * np.sin(h / 3.0) - 0.01 * (q - 1000)
    return Gmm1D([0.6, 0.4], [mu, 25.0], [64.0, 100.0], "distinct")


def _lon_model(h, lane):
    return Gmm1D([0.5, 0.5], [0.13, 0.27 + 0.001 * (h % 5)], [4e-4, 4e-4], "tied")


def _grids(qs=(1000,), lanes=(2, 3, 4), hectos=range(5980, 6011), skip=()):
    lat = {("up", q, h): _lat_model(h, q) for q in qs for h in hectos if h not in skip}
    lon = {("up", q, h, ln): _lon_model(h, ln) for q in qs for h in hectos for ln in lanes}
    return GmmGrid("lateral", lat, {}), GmmGrid("longitudinal", lon, {})


@pytest.fixture(scope="module")
def lookup():
    lat, lon = _grids(qs=(1000, 1250, 1750), skip=(5995,))
    return build_lookup(lat, lon, (598.0, 601.0), LookupParams(H=5))


def test_vector_lengths(lookup):
    assert LookupParams().D == 201 and LookupParams().V == 61
    assert lookup.sample_p_lat("up", 1000, 599.0).shape == (201,)
    assert lookup.sample_p_lon("up", 1000, 3, 599.0).shape == (61,)
    m_lat, m_lon = lookup.ahead_matrices("up", 1000, 3, 599.0)
    assert m_lat.shape == (5, 201) and m_lon.shape == (5, 61)


def test_knot_fidelity(lookup):
    p = lookup.params
    f = lookup.lat[("up", 1000)]
    for h in (5980, 5986, 6000, 6010):
        vals = f.rows([h / 10], p.offset_knots())[0]
        np.testing.assert_allclose(vals, _lat_model(h).pdf(p.offset_knots()), atol=1e-6)
    # point evaluation agrees with the row evaluation
    assert f(598.6, -30.0)[0] == pytest.approx(_lat_model(5986).pdf(-30.0), abs=1e-6)


def test_missing_hectometer_is_filled_from_nearest(lookup):
    f = lookup.lat[("up", 1000)]
    assert 5995 in f.filled
    # ties go to the lower neighbour
    np.testing.assert_allclose(f.rows([599.5], [-30.0]), _lat_model(5994).pdf([-30.0])[None], atol=1e-6)


def test_off_knot_against_finer_grid():
    lat, lon = _grids()
    coarse = build_lookup(lat, lon, (598.0, 601.0), LookupParams(H=1))
    # dense oracle: the exact pdf of the interpolated mean between neighbouring hectometers
    v = coarse.lat[("up", 1000)](598.65, -30.5)[0]
    ref = 0.5 * (_lat_model(5986).pdf(-30.5) + _lat_model(5987).pdf(-30.5))
    assert v == pytest.approx(float(ref), abs=1e-3)


def test_lateral_mass(lookup):
    v = lookup.sample_p_lat("up", 1000, 599.3)
    assert 0.97 <= v.sum() / lookup.params.r_d <= 1.03
    assert np.all(v >= 0)


def test_argmax_near_mode(lookup):
    v = lookup.sample_p_lat("up", 1000, 600.0)
    assert abs(lookup.params.offsets[v.argmax()] - _lat_model(6000).means[0]) <= 2


def test_zero_speed_tail(lookup):
    v = lookup.sample_p_lon("up", 1000, 2, 599.0)
    assert v[0] < 0.01 * v.max()


def test_discharge_fallback(lookup):
    assert lookup.resolve_lat("up", 1000) == (("up", 1000), False)
    # 1500 missing: 1250 and 1750 are equally near, lower wins
    assert lookup.resolve_lat("up", 1500) == (("up", 1250), True)
    assert lookup.resolve_lat("up", 2000) == (("up", 1750), True)
    assert lookup.resolve_lat("up", 2250) == (("up", 1750), True)
    with pytest.raises(LookupFailure):
        lookup.resolve_lat("up", 2500)
    with pytest.raises(LookupFailure):
        lookup.resolve_lat("down", 1000)
    vec, flag = lookup.sample_p_lat("up", 1500, 599.0, with_flag=True)
    assert flag
    np.testing.assert_array_equal(vec, lookup.sample_p_lat("up", 1250, 599.0))


def test_only_far_neighbour_fails():
    lat, lon = _grids(qs=(2250,))
    lk = build_lookup(lat, lon, (598.0, 601.0), LookupParams(H=1))
    with pytest.raises(LookupFailure):
        lk.sample_p_lat("up", 1500, 599.0)


def test_lane_fallback():
    lat, lon = _grids(qs=(1000,), lanes=(3,))
    lk = build_lookup(lat, lon, (598.0, 601.0), LookupParams(H=1))
    assert lk.resolve_lon("up", 1000, 4) == (("up", 1000, 3), True)
    assert lk.resolve_lon("up", 1250, 2) == (("up", 1000, 3), True)
    with pytest.raises(LookupFailure):
        lk.resolve_lon("up", 1000, 1)


def test_ahead_rows_compose(lookup):
    m_lat, m_lon = lookup.ahead_matrices("up", 1000, 3, 599.0)
    for h in range(5):
        np.testing.assert_allclose(m_lat[h], lookup.sample_p_lat("up", 1000, 599.0 + 0.1 * (h + 1)), atol=1e-12)
        np.testing.assert_allclose(m_lon[h], lookup.sample_p_lon("up", 1000, 3, 599.0 + 0.1 * (h + 1)), atol=1e-12)


def test_ahead_at_river_end(lookup):
    m_lat, _, edge = lookup.ahead_matrices("up", 1000, 3, 601.0, with_flag=True)
    assert edge
    for row in m_lat:
        np.testing.assert_array_equal(row, m_lat[-1])
    _, _, edge = lookup.ahead_matrices("up", 1000, 3, 599.0, with_flag=True)
    assert not edge


def test_empty_key():
    lat, lon = _grids()
    with pytest.raises(EmptyKey):
        build_lookup(lat, lon, (598.0, 601.0), keys=[("up", 2000)])
    with pytest.raises(EmptyKey):
        build_lookup(GmmGrid("lateral", {}, {}), lon, (598.0, 601.0))


def test_save_load_is_exact(lookup, tmp_path):
    lookup.save(tmp_path / "l.bin")
    back = LookupDict.load(tmp_path / "l.bin")
    np.testing.assert_array_equal(back.sample_p_lat("up", 1500, 599.37), lookup.sample_p_lat("up", 1500, 599.37))
    np.testing.assert_array_equal(back.sample_p_lon("up", 1000, 4, 600.01), lookup.sample_p_lon("up", 1000, 4, 600.01))
    lookup.save(tmp_path / "l2.bin")
    assert (tmp_path / "l.bin").read_bytes() == (tmp_path / "l2.bin").read_bytes()


def test_batched_rows_match_single(lookup):
    ks = np.array([[598.3, 599.91], [600.5, 598.0]])
    rows = lookup.lat_rows("up", np.array([1000, 1500]), ks)
    np.testing.assert_allclose(rows[1, 0], lookup.sample_p_lat("up", 1500, 600.5), atol=1e-14)
    lon = lookup.lon_rows("up", np.array([1000, 1000]), np.array([3, 4]), ks)
    np.testing.assert_allclose(lon[1, 1], lookup.sample_p_lon("up", 1000, 4, 598.0), atol=1e-14)


def test_queries_clamp_and_are_pure(lookup):
    a = lookup.sample_p_lat("up", 1000, 590.0)
    np.testing.assert_array_equal(a, lookup.sample_p_lat("up", 1000, 598.0))
    np.testing.assert_array_equal(lookup.sample_p_lat("up", 1000, 599.0), lookup.sample_p_lat("up", 1000, 599.0))


def test_params_validation():
    with pytest.raises(ValueError):
        LookupParams(m_prime=200)
    with pytest.raises(ValueError):
        LookupParams(r_d=0.123)
    assert list(hecto_knots(598.04, 598.26)) == [5980, 5981, 5982, 5983]


def test_mass_oracle_by_quadrature():
    m = _lat_model(6000)
    inside = quad(lambda x: float(m.pdf(x)), -100, 100)[0]
    assert inside > 0.99
