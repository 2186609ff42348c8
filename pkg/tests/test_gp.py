import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import cholesky

import oracles
from cellsense.errors import InvalidInputError, NotLocatableError, NumericError
from cellsense.estimators import ALL, Method
from cellsense.fingerprint import build_fingerprint
from cellsense.geo import LocalPoint
from cellsense.gp import (
    GpHyper,
    GpLocator,
    fit,
    fit_tower_models,
    gp_locate,
    kernel,
    kernel_matrix,
    log_marginal_likelihood,
    predict,
    predict_many,
    select_hyperparams,
)
from cellsense.trace_io import RssiScan, TowerReading

from conftest import ORIGIN

H = GpHyper(100.0, 4.0, 2.0)


def sample_prior(rng, n, hyper, mean=-80.0, extent=1000.0):
    x = rng.uniform(0, extent, size=(n, 2))
    K = kernel_matrix(x, x, hyper) + hyper.sigma_n_db ** 2 * np.eye(n)
    y = mean + np.linalg.cholesky(K) @ rng.standard_normal(n)
    return x, y


class TestKernel:
    def test_zero_distance(self):
        p = LocalPoint(3, 4)
        assert kernel(p, p, H) == 16.0

    def test_hand_value(self):
        h = GpHyper(100.0, 2.0, 1.0)
        assert kernel(LocalPoint(0, 0), LocalPoint(100, 0), h) == pytest.approx(2.42612, abs=1e-5)
        assert kernel(LocalPoint(0, 0), LocalPoint(100, 0), h) == 4 * math.exp(-0.5)

    @given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
    def test_symmetric(self, ax, ay, bx, by):
        a, b = LocalPoint(ax, ay), LocalPoint(bx, by)
        assert kernel(a, b, H) == kernel(b, a, H)

    @settings(max_examples=30)
    @given(st.integers(0, 10**6))
    def test_pivots_positive(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 500, size=(30, 2))
        h = GpHyper(float(rng.choice([50, 200, 800])), 8.0, 2.0)
        K = kernel_matrix(x, x, h) + h.sigma_n_db ** 2 * np.eye(30)
        np.testing.assert_array_equal(K, K.T)
        L = cholesky(K, lower=True)
        assert np.all(np.diag(L) > 0)

    @pytest.mark.parametrize("kw", [{"length_scale_m": 0}, {"sigma_f_db": -1},
                                    {"sigma_n_db": float("inf")}])
    def test_hyper_validation(self, kw):
        args = {"length_scale_m": 1.0, "sigma_f_db": 1.0, "sigma_n_db": 1.0, **kw}
        with pytest.raises(InvalidInputError):
            GpHyper(**args)


class TestFitPredict:
    def test_single_point_closed_form(self):
        h = GpHyper(100.0, 4.0, 2.0)
        m = fit([LocalPoint(0, 0)], [-70.0], h, prior_mean=0.0)
        mean, _ = predict(m, LocalPoint(0, 0))
        assert mean == pytest.approx(-70.0 * 16 / (16 + 4), abs=1e-12)

    def test_noiseless_interpolation(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1000, size=(30, 2))
        y = rng.uniform(-100, -60, size=30)
        m = fit(x, y, GpHyper(100.0, 8.0, 1e-6))
        mean, _ = predict_many(m, x)
        assert np.max(np.abs(mean - y)) < 1e-3

    def test_duplicate_points(self):
        m = fit([LocalPoint(1, 1), LocalPoint(1, 1)], [-70.0, -72.0], H)
        assert predict(m, LocalPoint(1, 1))[0] == pytest.approx(-71.0, abs=0.5)

    def test_prior_reversion_far_away(self):
        m = fit([LocalPoint(0, 0), LocalPoint(10, 0)], [-70.0, -90.0], H)
        mean, var = predict(m, LocalPoint(1e5, 1e5))
        assert mean == pytest.approx(-80.0, abs=1e-9)
        assert var == pytest.approx(H.sigma_f_db ** 2, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("n", [3, 17, 50])
    def test_matches_dense_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        h = GpHyper(float(rng.choice([50, 100, 400])), float(rng.choice([2, 8])),
                    float(rng.choice([2, 4])))
        x, y = sample_prior(rng, n, h, extent=600)
        m = fit(x, y, h)
        q = rng.uniform(-100, 700, size=(10, 2))
        mean, var = predict_many(m, q)
        xs = [tuple(p) for p in x.tolist()]
        for j in range(len(q)):
            om, ov = oracles.gp_predict(xs, y.tolist(), tuple(q[j]), h.length_scale_m,
                                        h.sigma_f_db, h.sigma_n_db, float(np.mean(y)))
            assert abs(mean[j] - om) < 1e-9
            assert abs(var[j] - ov) < 1e-9

    @settings(max_examples=30)
    @given(st.integers(0, 10**6), st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
    def test_mean_linear_in_targets(self, seed, a):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 500, size=(12, 2))
        y = rng.normal(0, 5, size=12)
        q = rng.uniform(0, 500, size=(5, 2))
        m1 = fit(x, y, H, prior_mean=0.0)
        m2 = fit(x, a * y, H, prior_mean=0.0)
        np.testing.assert_allclose(predict_many(m2, q)[0], a * predict_many(m1, q)[0],
                                   rtol=1e-9, atol=1e-9)

    @settings(max_examples=30)
    @given(st.integers(0, 10**6))
    def test_variance_bounds(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 300, size=(20, 2))
        m = fit(x, rng.normal(-80, 5, size=20), H)
        _, var = predict_many(m, rng.uniform(-2000, 2000, size=(50, 2)))
        assert np.all(var >= 0)
        assert np.all(var <= H.sigma_f_db ** 2 + 1e-9)

    def test_non_finite_targets(self):
        with pytest.raises(NumericError):
            fit([LocalPoint(0, 0)], [float("nan")], H)

    def test_mismatched_inputs(self):
        with pytest.raises(InvalidInputError):
            fit([LocalPoint(0, 0)], [-70.0, -71.0], H)


class TestMarginalLikelihood:
    def test_scalar_case(self):
        m = fit([LocalPoint(0, 0)], [0.0], H, prior_mean=0.0)
        expect = -0.5 * math.log(16 + 4) - 0.5 * math.log(2 * math.pi)
        assert log_marginal_likelihood(m) == pytest.approx(expect, abs=1e-12)

    def test_noise_model_preferred_on_noise(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0, 100, size=(40, 2))
        y = rng.normal(0, 4, size=40)
        noisy = fit(x, y, GpHyper(800.0, 2.0, 4.0), prior_mean=0.0)
        tight = fit(x, y, GpHyper(800.0, 2.0, 0.01), prior_mean=0.0)
        assert log_marginal_likelihood(noisy) > log_marginal_likelihood(tight)

    @settings(max_examples=20)
    @given(st.integers(0, 10**6))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 500, size=(15, 2))
        y = rng.normal(-80, 6, size=15)
        perm = rng.permutation(15)
        a = log_marginal_likelihood(fit(x, y, H))
        b = log_marginal_likelihood(fit(x[perm], y[perm], H))
        assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


class TestSelection:
    def test_constant_targets_pick_longest_scale(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1000, size=(60, 2))
        h = select_hyperparams(x, np.full(60, -75.0))
        assert h.length_scale_m == 800.0

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x, y = sample_prior(rng, 120, GpHyper(200.0, 8.0, 4.0))
        assert select_hyperparams(x, y, seed=3) == select_hyperparams(x, y, seed=3)

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            select_hyperparams(np.zeros((4, 2)), np.zeros(4))


def gp_fixture(seed):
    rng = np.random.default_rng(seed)
    models = {}
    for t in ("A", "B", "C"):
        h = GpHyper(float(rng.choice([100, 200])), 6.0, 3.0)
        x, y = sample_prior(rng, 15, h, extent=100)
        models[t] = fit(x, y, h)
    cands = [((r, c), LocalPoint(c * 20.0 + 10, r * 20.0 + 10)) for r in range(5) for c in range(5)]
    return models, cands


def gp_scan(rng, towers=("A", "B", "C", "Q")):
    return RssiScan(0, 0, None, tuple(TowerReading(t, int(rng.integers(-95, -65)))
                                      for t in towers))


class TestGpLocate:
    def test_single_candidate(self):
        models, _ = gp_fixture(0)
        c = [("only", LocalPoint(42.0, -7.0))]
        est = gp_locate(models, c, gp_scan(np.random.default_rng(0)), origin=ORIGIN)
        assert est.location == LocalPoint(42.0, -7.0)
        assert est.method is Method.GP and est.elapsed_ns > 0

    def test_dominant_candidate(self):
        m = fit([LocalPoint(0, 0), LocalPoint(1000, 0)], [-60.0, -100.0], GpHyper(50.0, 8.0, 1.0))
        ma, va = predict(m, LocalPoint(0, 0))
        cands = [("a", LocalPoint(0, 0)), ("b", LocalPoint(1000, 0))]
        s = RssiScan(0, 0, None, (TowerReading("T", int(round(ma))),))
        est = gp_locate({"T": m}, cands, s, 1, origin=ORIGIN)
        assert est.top_candidates[0][0] == "a"

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("k", [1, 3, ALL])
    def test_matches_per_candidate_oracle(self, seed, k):
        models, cands = gp_fixture(seed)
        s = gp_scan(np.random.default_rng(seed + 50))
        est = gp_locate(models, cands, s, k, origin=ORIGIN)
        (x, y), keys, _ = oracles.gp_locate(models, cands, s, k)
        assert abs(est.location.x - x) < 1e-9 and abs(est.location.y - y) < 1e-9
        assert [c for c, _ in est.top_candidates][:1] == keys[:1]

    @pytest.mark.parametrize("seed", range(4))
    def test_locator_cache_identical(self, seed):
        models, cands = gp_fixture(seed)
        loc = GpLocator(models, cands, ORIGIN)
        rng = np.random.default_rng(seed)
        for _ in range(3):
            s = gp_scan(rng)
            for k in (1, 4, ALL):
                a = gp_locate(models, cands, s, k, origin=ORIGIN)
                b = loc.locate(s, k)
                assert a.location == b.location and a.top_candidates == b.top_candidates

    def test_no_models(self):
        models, cands = gp_fixture(0)
        s = RssiScan(0, 0, None, (TowerReading("nope", -70),))
        with pytest.raises(NotLocatableError):
            gp_locate(models, cands, s, origin=ORIGIN)


class TestTowerModels:
    def test_fit_on_simulated_trace(self, urban0):
        fp = build_fingerprint(urban0.train)
        models = fit_tower_models(urban0.train, fp.grid.origin, seed=0)
        assert models
        for m in models.values():
            assert m.n <= 1000 and m.n_source_points >= m.n

    def test_training_cap(self, urban0):
        fp = build_fingerprint(urban0.train)
        models = fit_tower_models(urban0.train, fp.grid.origin, seed=0, max_points=40)
        assert all(m.n <= 40 for m in models.values())
        assert any(m.n_source_points > 40 for m in models.values())
