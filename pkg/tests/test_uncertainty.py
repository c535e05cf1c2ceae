"""Entropy estimation and the conformal calibration pipeline."""

import numpy as np
import pytest

from snefy_ldl.core import InvalidLevelError, LdlDataset, floor_normalize, make_rng
from snefy_ldl.moments import chebyshev_interval, conditional_moments_batch, k_from_level
from snefy_ldl.training import MaxEntModel
from snefy_ldl.uncertainty import (
    ConformalCalibrator,
    DirichletBaseline,
    calibrated_interval,
    calibrated_intervals,
    calibration_scores,
    conformal_quantile,
    dirichlet_baseline_calibrate,
    dirichlet_entropy,
    entropy_estimate,
    fit_conformal,
    fit_dirichlet_concentration,
    fsc,
    fsc_table,
    score_matrix,
)

from conftest import dirichlet_model, random_model, uniform_model


class TestEntropy:
    def test_uniform_l3_exact_any_iteration_count(self):
        model = uniform_model(3, n=2, readout=np.array([[0.3, 0.7]]))
        for n_iter in (1, 7, 500):
            est = entropy_estimate(model, np.array([0.0]), n_iter=n_iter, rng=make_rng(n_iter))
            assert est == pytest.approx(-np.log(2.0), abs=1e-12)

    def test_uniform_l2_zero(self):
        est = entropy_estimate(uniform_model(2), np.array([0.0]), n_iter=64, rng=make_rng(1))
        assert est == pytest.approx(0.0, abs=1e-12)

    def test_zero_sampling_variance_for_uniform(self):
        model = uniform_model(3)
        values = {
            entropy_estimate(model, np.array([0.0]), n_iter=32, rng=make_rng(seed))
            for seed in range(5)
        }
        assert len({round(v, 12) for v in values}) == 1

    def test_dirichlet_entropy_formula_vs_hand_integral(self):
        # H of Beta(3,1) by direct integration: -(log 3 + 2 int 3 t^2 log t dt)
        hand = -(np.log(3.0) - 2.0 / 3.0)
        assert dirichlet_entropy([3.0, 1.0]) == pytest.approx(hand, abs=1e-12)

    def test_importance_estimate_matches_closed_form(self):
        model = dirichlet_model([3.0, 1.0])
        est = entropy_estimate(model, np.array([0.0]), n_iter=1_000_000, rng=make_rng(8))
        assert est == pytest.approx(dirichlet_entropy([3.0, 1.0]), abs=0.01)


class TestScores:
    def test_perfect_prediction_scores_zero(self):
        s = score_matrix(np.array([[0.5]]), np.array([[0.04]]), np.array([[0.5]]), k=2.0)
        assert s[0, 0] == 0.0

    def test_hand_value(self):
        k = np.sqrt(10.0)
        s = score_matrix(np.array([[0.5]]), np.array([[0.04]]), np.array([[0.8]]), k=k)
        assert s[0, 0] == pytest.approx(0.3 / (k * 0.2), abs=1e-12)

    def test_zero_variance_conventions(self):
        s = score_matrix(
            np.array([[0.5, 0.2]]), np.array([[0.0, 0.0]]), np.array([[0.5, 0.3]]), k=2.0
        )
        assert s[0, 0] == 0.0 and s[0, 1] == np.inf


class TestConformalQuantile:
    def test_small_set_yields_max(self):
        scores = make_rng(1).uniform(size=9)
        assert conformal_quantile(scores, 0.9) == scores.max()

    def test_ninety_of_hundred(self):
        scores = make_rng(2).permutation(np.arange(1.0, 100.0))
        assert conformal_quantile(scores, 0.9) == 90.0

    def test_too_small_calibration_set(self):
        assert conformal_quantile(np.array([0.1, 0.2, 0.3, 0.4]), 0.9) == np.inf

    def test_empty_rejected(self):
        with pytest.raises(InvalidLevelError):
            conformal_quantile(np.array([]), 0.9)

    def test_monotone_in_level(self):
        scores = make_rng(3).uniform(size=200)
        qs = [conformal_quantile(scores, lv) for lv in (0.5, 0.7, 0.9, 0.99)]
        assert qs == sorted(qs)

    def test_permutation_invariant(self):
        scores = make_rng(4).uniform(size=50)
        shuffled = make_rng(5).permutation(scores)
        assert conformal_quantile(scores, 0.8) == conformal_quantile(shuffled, 0.8)


class TestCalibratedIntervals:
    def _cal(self, quantiles, level=0.9):
        return ConformalCalibrator(level=level, k=k_from_level(level), quantiles=np.asarray(quantiles))

    def test_unit_quantile_recovers_chebyshev(self):
        model = random_model(31, L=3, n=2)
        x = np.array([0.3, -0.5])
        cal = self._cal(np.ones(3))
        means, variances = conditional_moments_batch(model, x[None, :])
        for r in range(3):
            assert calibrated_interval(model, x, r, cal) == pytest.approx(
                chebyshev_interval(means[0, r], variances[0, r], cal.k), abs=1e-12
            )

    def test_infinite_quantile_gives_unit_interval(self):
        model = random_model(32, L=2, n=2)
        cal = self._cal([np.inf, np.inf])
        assert calibrated_interval(model, np.array([0.1, 0.2]), 0, cal) == (0.0, 1.0)

    def test_hand_interval(self):
        k = np.sqrt(10.0)
        half = k * 0.5 * 0.1
        iv = np.clip([0.5 - half, 0.5 + half], 0, 1)
        # direct substitution: mean 0.5, var 0.01, q = 0.5
        cal = self._cal([0.5])

        class Point:
            def moments(self, X):
                return np.array([[0.5]]), np.array([[0.01]])

        got = calibrated_intervals(Point(), np.zeros((1, 1)), cal)[0, 0]
        np.testing.assert_allclose(got, iv, atol=1e-12)
        np.testing.assert_allclose(got, [0.34189, 0.65811], atol=1e-5)


class TestFsc:
    def _fixture(self):
        # 6 samples, single label dimension padded to L=2; first feature
        # determines the bin, intervals hand-chosen for a known count
        X = np.array([[0.0], [0.2], [0.4], [0.6], [0.8], [1.0]])
        truth = np.array([0.5, 0.9, 0.5, 0.5, 0.1, 0.5])
        Y = np.column_stack([truth, 1.0 - truth])
        iv = np.zeros((6, 2, 2))
        iv[:, 0, 0], iv[:, 0, 1] = 0.4, 0.6  # covers truth == 0.5 only
        iv[:, 1, 0], iv[:, 1, 1] = 0.0, 1.0
        return LdlDataset(X, Y), iv

    def test_hand_fixture_matches_exhaustive_count(self):
        test, iv = self._fixture()
        # bin_size=2 over range [0,1]: bin 0 holds x in {0, .2, .4} -> 2/3
        # covered; bin 1 holds {.6, .8, 1.0} -> 2/3 covered
        assert fsc(test, iv, 2, 0) == pytest.approx(2 / 3)
        # bin_size=3: bins {0,.2}, {.4,.6}, {.8,1}: coverages 1/2, 1, 1/2
        assert fsc(test, iv, 3, 0) == pytest.approx(0.5)
        assert fsc(test, iv, 2, 1) == 1.0

    def test_full_intervals_cover_everything(self):
        test, iv = self._fixture()
        iv[:, 0, 0], iv[:, 0, 1] = 0.0, 1.0
        assert fsc(test, iv, 4, 0) == 1.0

    def test_min_of_group_rates(self):
        test, iv = self._fixture()
        # left bin fully covered, right bin half covered
        iv[:, 0, 0] = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.6])
        iv[:, 0, 1] = np.array([1.0, 1.0, 1.0, 1.0, 0.05, 0.4])
        assert fsc(test, iv, 2, 0) == pytest.approx(1 / 3)

    def test_table_layout(self):
        test, iv = self._fixture()
        rows = fsc_table(test, iv, (2, 4, 8))
        assert len(rows) == 2 * 3
        assert {(r[0], r[1]) for r in rows} == {
            (name, size) for name in test.label_names for size in (2, 4, 8)
        }


class TestDirichletBaseline:
    def test_variance_formula(self):
        base = DirichletBaseline(
            predictor=MaxEntModel(np.zeros((2, 1)), np.log(np.array([3.0, 1.0]))),
            concentration=4.0,
        )
        means, variances = base.moments(np.zeros((1, 1)))
        np.testing.assert_allclose(means[0], [0.75, 0.25], atol=1e-12)
        assert variances[0, 0] == pytest.approx(0.0375, abs=1e-12)

    def test_symmetric_two_label_uniform(self):
        base = DirichletBaseline(
            predictor=MaxEntModel(np.zeros((2, 1)), np.zeros(2)), concentration=2.0
        )
        _, variances = base.moments(np.zeros((1, 1)))
        np.testing.assert_allclose(variances[0], 1 / 12, atol=1e-12)

    def test_large_concentration_kills_variance(self):
        base = DirichletBaseline(
            predictor=MaxEntModel(np.zeros((3, 1)), np.zeros(3)), concentration=1e9
        )
        _, variances = base.moments(np.zeros((1, 1)))
        assert np.all(variances < 1e-9)

    def test_concentration_recovery(self):
        # labels drawn from Dir(tau * p) with known tau; MLE should land nearby
        rng = make_rng(6)
        predictor = MaxEntModel(np.zeros((3, 2)), np.array([0.3, 0.0, -0.3]))
        X = rng.standard_normal((2500, 2))
        p = predictor.predict(X)
        Y = np.stack([floor_normalize(rng.dirichlet(8.0 * row)) for row in p])
        tau = fit_dirichlet_concentration(predictor, LdlDataset(X, Y))
        assert 6.5 < tau < 10.0

    def test_calibrate_returns_usable_pair(self):
        rng = make_rng(7)
        predictor = MaxEntModel(0.2 * rng.standard_normal((3, 2)), np.zeros(3))
        X = rng.standard_normal((80, 2))
        Y = np.stack([floor_normalize(rng.dirichlet(np.ones(3) * 5)) for _ in range(80)])
        calib = LdlDataset(X, Y)
        baseline, cal = dirichlet_baseline_calibrate(predictor, calib, 0.9)
        iv = calibrated_intervals(baseline, X[:5], cal)
        assert iv.shape == (5, 3, 2)
        assert np.all(iv[..., 0] <= iv[..., 1])


class TestCoverage:
    def test_marginal_coverage_on_exchangeable_data(self):
        # exchangeable calib/test by construction; the predictor is a fixed
        # random model, which conformal calibration must still cover for
        level, n_each = 0.9, 500
        model = random_model(700, L=2, n=3, d=2)
        hits = 0
        for seed in range(5):
            rng = make_rng(seed, stream=55)
            X = rng.standard_normal((2 * n_each, 2))
            alpha = 4.0 + 3.0 * (X[:, 0] > 0)
            Y = np.stack(
                [floor_normalize(rng.dirichlet(np.full(2, a))) for a in alpha]
            )
            ds = LdlDataset(X, Y)
            calib, test = ds.subset(np.arange(n_each)), ds.subset(np.arange(n_each, 2 * n_each))
            cal = fit_conformal(model, calib, level)
            iv = calibrated_intervals(model, test.features, cal)
            covered = (test.labels >= iv[..., 0]) & (test.labels <= iv[..., 1])
            if np.all(covered.mean(axis=0) >= 0.873):
                hits += 1
        assert hits >= 4

    def test_fit_conformal_quantiles_shape(self):
        model = random_model(41, L=3, n=2)
        calib = LdlDataset(
            make_rng(1).standard_normal((30, 2)),
            np.stack([floor_normalize(v) for v in make_rng(2).dirichlet(np.ones(3), 30)]),
        )
        cal = fit_conformal(model, calib, 0.9)
        assert cal.quantiles.shape == (3,)
        scores = calibration_scores(model, calib, cal.k)
        assert scores.shape == (30, 3)
