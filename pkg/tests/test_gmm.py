import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from sklearn.mixture import GaussianMixture

from inland_vtp.errors import InsufficientData
from inland_vtp.gmm import (KIND_VAR_FLOOR, VAR_FLOOR, Gmm1D, GmmGrid, bic, bic_value, fit_em, fit_grid, grid_search,
                            key_from_str, key_to_str, param_count, pdf)
from inland_vtp.ingest import LabeledTrip


def bimodal(seed, n=5000, sds=(8.0, 12.0)):
    r = np.random.default_rng(seed)
    k = r.random(n) < 0.3
    return np.where(k, r.normal(-30, sds[0], n), r.normal(20, sds[1], n))


def test_param_count():
    assert param_count(2, "distinct") == 5
    assert param_count(2, "tied") == 4
    assert param_count(1, "distinct") == 2
    with pytest.raises(ValueError):
        param_count(0, "tied")


def test_bic_arithmetic():
    assert bic_value(2, 100, -150.0) == pytest.approx(2 * math.log(100) + 300, abs=1e-12)
    assert bic_value(2, 100, -150.0) == pytest.approx(309.2103, abs=1e-4)
    assert bic_value(3, 1, -7.0) == 14.0


def test_single_component_is_mle(rng):
    x = rng.normal(3.0, 2.0, 500)
    m = fit_em(x, 1)
    assert m.means[0] == pytest.approx(x.mean(), abs=1e-10)
    assert m.variances[0] == pytest.approx(x.var(), rel=1e-10)
    assert m.bic == pytest.approx(bic(m, len(x)))


def test_degenerate_data_uses_floor():
    m = fit_em(np.full(50, 4.2), 1)
    assert m.means[0] == pytest.approx(4.2) and m.variances[0] == VAR_FLOOR
    m2 = fit_em(np.full(50, 4.2), 2)
    assert np.all(m2.variances >= VAR_FLOOR) and np.allclose(m2.means, 4.2)


def test_bimodal_recovery():
    m = fit_em(bimodal(0), 2)
    order = np.argsort(m.means)
    np.testing.assert_allclose(m.means[order], [-30, 20], atol=1.5)
    np.testing.assert_allclose(m.weights[order], [0.3, 0.7], atol=0.03)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_matches_sklearn():
    x = bimodal(7, n=3000)
    m = fit_em(x, 2, seed=0)
    sk = GaussianMixture(2, covariance_type="full", tol=1e-8, max_iter=500, n_init=3, random_state=0).fit(x[:, None])
    order, sk_order = np.argsort(m.means), np.argsort(sk.means_.ravel())
    np.testing.assert_allclose(m.means[order], sk.means_.ravel()[sk_order], atol=0.05)
    np.testing.assert_allclose(m.weights[order], sk.weights_[sk_order], atol=0.005)
    assert m.loglik == pytest.approx(sk.score(x[:, None]) * len(x), rel=1e-5)

    mt = fit_em(x, 2, "tied", seed=0)
    skt = GaussianMixture(2, covariance_type="tied", tol=1e-8, max_iter=500, n_init=3, random_state=0).fit(x[:, None])
    assert mt.variances[0] == mt.variances[1]
    assert mt.variances[0] == pytest.approx(float(skt.covariances_.ravel()[0]), rel=1e-3)


def test_em_monotone_and_extra_component_never_hurts():
    x = bimodal(3, n=2000)
    for C in (1, 2, 3, 4):
        for cons in ("distinct", "tied"):
            h = np.array(fit_em(x, C, cons).history)
            assert np.all(np.diff(h) >= -1e-9)
    for C in (1, 2, 3):
        assert fit_em(x, C + 1).loglik >= fit_em(x, C).loglik - 1e-6


def test_pdf_values():
    n01 = Gmm1D([1.0], [0.0], [1.0])
    assert pdf(n01, 0.0) == pytest.approx(0.3989423, abs=1e-7)
    mix = Gmm1D([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0])
    assert pdf(mix, 0.0) == pytest.approx(0.2419707, abs=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 1.0), st.floats(-50, 50), st.floats(0.5, 20)), min_size=1, max_size=4))
def test_pdf_normalized_and_permutation_invariant(comps):
    w = np.array([c[0] for c in comps])
    w = w / w.sum()
    mu = np.array([c[1] for c in comps])
    var = np.array([c[2] for c in comps]) ** 2
    m = Gmm1D(w, mu, var)
    sds = np.sqrt(var)
    lo, hi = float(np.min(mu - 10 * sds)), float(np.max(mu + 10 * sds))
    pts = sorted(set(np.clip(mu, lo, hi)))
    total = quad(lambda x: float(m.pdf(x)), lo, hi, points=pts, limit=200, epsabs=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-4)
    p = np.random.default_rng(0).permutation(len(w))
    xs = np.linspace(lo, hi, 57)
    np.testing.assert_allclose(Gmm1D(w[p], mu[p], var[p]).pdf(xs), m.pdf(xs), rtol=1e-12)


def test_grid_search_selection():
    c1 = sum(grid_search(np.random.default_rng(s).normal(0, 5, 2000), seed=s).C == 1 for s in range(20))
    assert c1 >= 18
    c2 = sum(grid_search(bimodal(s), seed=s).C == 2 for s in range(20))
    assert c2 >= 18


def test_grid_search_is_bic_optimal():
    x = bimodal(11, n=1500)
    best = grid_search(x, seed=4)
    for C in range(1, 5):
        for cons in ("distinct", "tied"):
            assert best.bic <= fit_em(x, C, cons, seed=4 + 7919 * C + (cons == "tied")).bic + 1e-9


def test_tied_wins_on_equal_variances():
    wins = sum(grid_search(bimodal(s, sds=(10.0, 10.0)), seed=s).constraint == "tied" for s in range(20))
    assert wins > 10


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        fit_em([1.0, 2.0], 1)


def test_key_strings():
    k = ("up", 1250, 5986, 4)
    assert key_to_str(k) == "up|1250|598.6|4"
    assert key_from_str(key_to_str(k)) == k
    assert key_from_str("down|1000|600.0") == ("down", 1000, 6000)


def _trip(tid, km, off, y, q=1000.0, lane=2):
    n = len(km)
    return LabeledTrip(tid, "up", 60.0 * np.arange(n), np.asarray(km, float), np.asarray(off, float),
                       np.asarray(y, float), np.zeros(n), np.full(n, q), np.full(n, q), np.full(n, lane))


def test_fit_grid_cells_and_skips(tmp_path):
    r = np.random.default_rng(0)
    trips = [_trip(f"t{i}", [600.0, 600.1], r.normal(-30, 5, 2), r.normal(0.25, 0.02, 2)) for i in range(60)]
    trips += [_trip(f"s{i}", [601.0], [0.0], [0.2]) for i in range(10)]
    grid = fit_grid(trips, "lateral")
    assert set(grid.models) == {("up", 1000, 6000), ("up", 1000, 6001)}
    assert grid.skipped == {("up", 1000, 6010): 10}
    for m in grid.models.values():
        assert m.C == 1 and abs(m.means[0] + 30) < 2
    grid.save(tmp_path / "g.json")
    back = GmmGrid.load(tmp_path / "g.json")
    np.testing.assert_array_equal(back.models[("up", 1000, 6000)].means, grid.models[("up", 1000, 6000)].means)


def test_fit_grid_two_speed_modes():
    r = np.random.default_rng(1)
    y = np.where(r.random(400) < 0.5, r.normal(0.13, 0.015, 400), r.normal(0.27, 0.015, 400))
    trips = [_trip(f"t{i}", [600.0], [100.0], [y[i]], lane=4) for i in range(400)]
    grid = fit_grid(trips, "longitudinal")
    assert grid.models[("up", 1000, 6000, 4)].C == 2


def test_fit_grid_applies_kind_floor():
    r = np.random.default_rng(5)
    off = np.concatenate([r.normal(-30, 6, 80), [49.5]])
    trips = [_trip(f"t{i}", [600.0], [x], [0.25]) for i, x in enumerate(off)]
    g = fit_grid(trips, "lateral")
    assert all(np.all(m.variances >= KIND_VAR_FLOOR["lateral"]) for m in g.models.values())
    raw = fit_grid(trips, "lateral", var_floor=VAR_FLOOR)
    assert all(np.all(m.variances >= VAR_FLOOR) for m in raw.models.values())
