import math

import numpy as np
import pytest

from bforge import dgp
from bforge.regression import (
    DegenerateDataError,
    FitConfig,
    derive_hyperparams,
    diagnostics,
    fit,
    predict,
)


def small_config(**kw):
    defaults = dict(n_trees=20, n_burn=60, n_kept=60, max_depth=4, n_cutpoints=15, n_chains=1, seed=0)
    defaults.update(kw)
    return FitConfig(**defaults)


class TestDeriveHyperparams:
    def test_leaf_sd_formula(self):
        hp, _ = derive_hyperparams(np.array([0.0, 1.0]), FitConfig(n_trees=200, k=2.0))
        assert hp.leaf_sd == pytest.approx(0.5 / (2 * math.sqrt(200)))
        assert hp.leaf_sd == pytest.approx(0.017677, abs=1e-6)
        assert hp.leaf_mean == 0.0

    def test_range_maps_to_one(self):
        y = np.array([3.0, -1.0, 7.0, 5.0])
        _, yscale = derive_hyperparams(y, FitConfig())
        scaled = yscale.forward(y)
        assert scaled.max() - scaled.min() == pytest.approx(1.0)
        assert scaled.max() == pytest.approx(0.5)
        np.testing.assert_allclose(yscale.inverse(scaled), y)

    def test_lam_calibration_places_q_mass_below_sample_variance(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=500)
        config = FitConfig(nu=3.0, q=0.90)
        hp, yscale = derive_hyperparams(y, config)
        v = np.var(yscale.forward(y), ddof=1)
        draws = hp.nu * hp.lam / rng.chisquare(hp.nu, 200_000)
        mass = (draws <= v).mean()
        assert abs(mass - 0.90) < 0.01

    def test_constant_response_rejected(self):
        with pytest.raises(DegenerateDataError):
            derive_hyperparams(np.full(10, 3.3), FitConfig())


class TestFit:
    def test_pure_noise_shrinks(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(50, 2))
        y = rng.normal(size=50)
        trace = fit(X, y, small_config())
        post_mean = trace.yhat_train.mean(axis=(0, 1))
        assert post_mean.var() < y.var() * 0.8

    def test_deterministic_given_seed(self):
        data = dgp.gen_easy(60, 2, seed=5)
        t1 = fit(data.X, data.y, small_config(n_chains=2))
        t2 = fit(data.X, data.y, small_config(n_chains=2))
        np.testing.assert_array_equal(t1.sigma, t2.sigma)
        np.testing.assert_array_equal(t1.yhat_train, t2.yhat_train)
        np.testing.assert_array_equal(t1.accepted, t2.accepted)
        for c in range(2):
            for a, b in zip(t1.forests[c], t2.forests[c]):
                np.testing.assert_array_equal(a.leaf_value, b.leaf_value)
                np.testing.assert_array_equal(a.cutpoint, b.cutpoint)

    def test_all_constant_predictors_rejected(self):
        y = np.arange(20.0)
        with pytest.raises(DegenerateDataError):
            fit(np.ones((20, 3)), y, small_config())

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fit(np.ones((10, 2)), np.ones(9), small_config())

    def test_keep_forests_default_depends_on_test_matrix(self):
        data = dgp.gen_easy(40, 2, seed=6)
        with_test = fit(data.X, data.y, small_config(n_kept=10, n_burn=10), X_test=data.X[:5])
        assert with_test.forests is None and with_test.yhat_test is not None
        without = fit(data.X, data.y, small_config(n_kept=10, n_burn=10))
        assert without.forests is not None and without.yhat_test is None

    def test_acceptance_band_on_easy_data(self):
        data = dgp.gen_easy(400, 3, seed=7)
        trace = fit(data.X, data.y, small_config(n_trees=50, n_burn=150, n_kept=150, max_depth=6, n_cutpoints=50))
        rate = trace.accepted[:, 150:, :].mean()
        assert 0.05 < rate < 0.60


class TestPredict:
    def test_training_points_reproduce_stored_values(self):
        data = dgp.gen_easy(50, 2, seed=8)
        trace = fit(data.X, data.y, small_config(n_kept=20, n_burn=20))
        pred = predict(trace, data.X)
        stored = trace.yhat_train.reshape(-1, 50)
        np.testing.assert_array_equal(pred.values, stored)

    def test_constant_forest_constant_prediction(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(30, 1))
        y = rng.normal(size=30)
        trace = fit(X, y, small_config(n_kept=10, n_burn=5))
        # overwrite every kept forest with a root-only constant
        for chain in trace.forests:
            for forest in chain:
                forest.cutpoint[:] = 0
                forest.axis[:] = 0
                forest.leaf_value[:] = 0
                forest.leaf_value[:, 1] = 0.25
        pred = predict(trace, X[:7])
        expected = trace.yscale.inverse(np.full(7, trace.config.n_trees * 0.25))
        for row in pred.values:
            np.testing.assert_allclose(row, expected)
        np.testing.assert_allclose(pred.sd, 0.0, atol=1e-12)

    def test_missing_forests_and_new_points_error(self):
        data = dgp.gen_easy(40, 2, seed=9)
        trace = fit(data.X, data.y, small_config(n_kept=5, n_burn=5), X_test=data.X[:4])
        with pytest.raises(ValueError, match="forests"):
            predict(trace, data.X[:6] + 0.01)

    def test_precomputed_test_values_are_reused(self):
        data = dgp.gen_easy(40, 2, seed=10)
        X_test = data.X[:6] * 0.5
        trace = fit(data.X, data.y, small_config(n_kept=5, n_burn=5), X_test=X_test)
        pred = predict(trace, X_test)
        np.testing.assert_array_equal(pred.values, trace.yhat_test.reshape(-1, 6))

    def test_interval_levels(self):
        data = dgp.gen_easy(40, 2, seed=11)
        trace = fit(data.X, data.y, small_config(n_kept=25, n_burn=10))
        pred = predict(trace, data.X[:3], levels=(0.5, 0.9))
        for level in (0.5, 0.9):
            lo, hi = pred.intervals[level]
            assert (lo <= pred.mean).all() and (pred.mean <= hi).all()
        lo5, hi5 = pred.intervals[0.5]
        lo9, hi9 = pred.intervals[0.9]
        assert ((hi9 - lo9) >= (hi5 - lo5) - 1e-12).all()


class TestScaleEquivariance:
    def test_affine_response_transform_commutes(self):
        data = dgp.gen_easy(60, 2, seed=12)
        config = small_config(n_kept=20, n_burn=20)
        base = fit(data.X, data.y, config)
        shifted = fit(data.X, 3.5 * data.y - 2.0, config)
        got = shifted.yhat_train
        want = 3.5 * base.yhat_train - 2.0
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(shifted.sigma, 3.5 * base.sigma, rtol=1e-5)


class TestMonteCarloAveraging:
    def test_train_rmse_improves_with_more_kept_draws_on_average(self):
        rmse = {5: [], 80: []}
        for seed in range(6):
            data = dgp.gen_easy(80, 2, seed=100 + seed)
            for kept in (5, 80):
                trace = fit(data.X, data.y, small_config(n_kept=kept, n_burn=40, seed=seed))
                post = trace.yhat_train.mean(axis=(0, 1))
                rmse[kept].append(float(np.sqrt(np.mean((post - data.y) ** 2))))
        assert np.mean(rmse[80]) <= np.mean(rmse[5])


class TestDiagnostics:
    def test_needs_two_chains(self):
        data = dgp.gen_easy(40, 2, seed=13)
        trace = fit(data.X, data.y, small_config(n_chains=1))
        with pytest.raises(ValueError):
            diagnostics(trace)

    def test_identical_chains_have_zero_discrepancy(self):
        data = dgp.gen_easy(40, 2, seed=14)
        trace = fit(data.X, data.y, small_config(n_chains=1, n_kept=15, n_burn=10))
        # fabricate a second chain identical to the first
        trace.sigma = np.repeat(trace.sigma, 2, axis=0)
        trace.yhat_train = np.repeat(trace.yhat_train, 2, axis=0)
        trace.accepted = np.repeat(trace.accepted, 2, axis=0)
        trace.mean_leaves = np.repeat(trace.mean_leaves, 2, axis=0)
        report = diagnostics(trace)
        assert report.cross_chain_ks == 0.0

    def test_reports_tree_size_and_acceptance(self):
        data = dgp.gen_easy(100, 2, seed=15)
        trace = fit(data.X, data.y, small_config(n_chains=2, n_kept=30, n_burn=30))
        report = diagnostics(trace)
        assert report.acceptance_per_tree.shape == (20,)
        assert 0.0 <= report.acceptance_rate <= 1.0
        assert report.mean_leaves_per_tree >= 1.0
        assert not report.deep_trees_flag

    def test_low_noise_acceptance_collapse_is_flagged(self):
        # nearly noiseless response with too few trees: the chain sticks
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(2000, 1))
        y = np.sin(6 * X[:, 0]) + rng.normal(0, 1e-4, 2000)
        trace = fit(X, y, small_config(n_trees=2, n_burn=400, n_kept=150, max_depth=6, n_cutpoints=100, n_chains=2))
        report = diagnostics(trace)
        assert report.low_acceptance_flag


class TestCoverage:
    def test_interval_coverage_near_nominal(self):
        hits = 0
        total = 0
        for rep in range(10):
            data = dgp.gen_easy(150, 2, seed=200 + rep)
            trace = fit(
                data.X,
                data.y,
                small_config(n_trees=30, n_burn=150, n_kept=150, max_depth=5, n_cutpoints=40, seed=rep),
            )
            values = trace.yhat_train.reshape(-1, 150)
            lo, hi = np.quantile(values, [0.05, 0.95], axis=0)
            hits += ((lo <= data.f_true) & (data.f_true <= hi)).sum()
            total += 150
        coverage = hits / total
        assert 0.70 <= coverage <= 0.995


class TestMidpointsGrid:
    def test_fit_with_midpoints_recovers_step_function(self):
        # few distinct predictor values: midpoints split every pair exactly
        rng = np.random.default_rng(30)
        levels = np.array([0.0, 1.0, 2.0, 3.0])
        X = rng.choice(levels, size=(400, 1))
        y = np.where(X[:, 0] >= 2.0, 1.0, -1.0) + rng.normal(0, 0.05, 400)
        config = small_config(grid="midpoints", n_trees=30, n_burn=200, n_kept=200, max_depth=5)
        trace = fit(X, y, config)
        post = trace.yhat_train.mean(axis=(0, 1))
        low = post[X[:, 0] < 2.0]
        high = post[X[:, 0] >= 2.0]
        assert low.max() < 0.0 < high.min()
        assert abs(low.mean() + 1.0) < 0.15
        assert abs(high.mean() - 1.0) < 0.15

    def test_midpoints_and_uniform_agree_on_dense_data(self):
        data = dgp.gen_easy(300, 2, seed=31)
        rmses = {}
        for scheme in ("uniform", "midpoints"):
            config = small_config(grid=scheme, n_trees=40, n_burn=200, n_kept=200, max_depth=5, n_cutpoints=60)
            trace = fit(data.X, data.y, config)
            post = trace.yhat_train.mean(axis=(0, 1))
            rmses[scheme] = float(np.sqrt(np.mean((post - data.f_true) ** 2)))
        assert abs(rmses["uniform"] - rmses["midpoints"]) < 0.1
        assert max(rmses.values()) < 0.3
