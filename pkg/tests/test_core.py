"""Simplex arithmetic, sampling, and dataset plumbing."""

import numpy as np
import pytest
from scipy.stats import kstest

from snefy_ldl.core import (
    DimensionError,
    InvalidDistributionError,
    LdlDataset,
    floor_normalize,
    is_label_distribution,
    log_uniform_simplex_density,
    make_rng,
    sample_uniform_simplex,
)


class TestFloorNormalize:
    def test_interior_input_passes_through(self):
        out = floor_normalize(np.array([0.5, 0.5]), 1e-6)
        np.testing.assert_allclose(out, [0.5, 0.5], rtol=0, atol=1e-12)

    def test_vertex_input_matches_formula(self):
        # oracle: normalize, lift by eps, renormalize
        eps = 1e-6
        expected = (np.array([1.0, 0.0]) + eps) / (1.0 + 2 * eps)
        out = floor_normalize(np.array([1.0, 0.0]), eps)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_unnormalized_input_matches_formula(self):
        eps = 1e-6
        u = np.array([2.0, 2.0, 0.0]) / 4.0
        expected = (u + eps) / (u + eps).sum()
        out = floor_normalize(np.array([2.0, 2.0, 0.0]), eps)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)

    def test_idempotent(self):
        rng = make_rng(5)
        for _ in range(200):
            raw = rng.uniform(0, 1, size=int(rng.integers(2, 8)))
            raw[rng.integers(0, raw.size)] = 0.0
            once = floor_normalize(raw)
            twice = floor_normalize(once)
            np.testing.assert_allclose(twice, once, rtol=0, atol=1e-12)

    def test_output_floor(self):
        rng = make_rng(6)
        for _ in range(100):
            L = int(rng.integers(2, 10))
            raw = rng.uniform(0, 1, size=L) * (rng.uniform(size=L) > 0.3)
            if raw.sum() == 0:
                raw[0] = 1.0
            out = floor_normalize(raw)
            assert out.min() >= 1e-6 / (1 + L * 1e-6) * (1 - 1e-9)
            assert abs(out.sum() - 1.0) < 1e-12

    @pytest.mark.parametrize(
        "bad", [np.zeros(3), np.array([-0.1, 1.1]), np.array([np.nan, 1.0]), np.array([np.inf, 1.0])]
    )
    def test_invalid_inputs(self, bad):
        with pytest.raises(InvalidDistributionError):
            floor_normalize(bad)


class TestUniformSimplexSampling:
    def test_mean_l2(self):
        draws = sample_uniform_simplex(2, make_rng(1), n=100_000)
        assert abs(draws[:, 0].mean() - 0.5) < 0.01

    def test_moments_l3(self):
        draws = sample_uniform_simplex(3, make_rng(2), n=100_000)
        # flat Dirichlet: mean 1/3, variance (1/3)(2/3)/4 = 1/18
        assert abs(draws[:, 0].mean() - 1 / 3) < 0.01
        assert abs(draws[:, 0].var() - 1 / 18) < 0.005

    def test_deterministic_for_fixed_seed(self):
        a = sample_uniform_simplex(3, make_rng(42))
        b = sample_uniform_simplex(3, make_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_rejects_degenerate_dimension(self):
        with pytest.raises(DimensionError):
            sample_uniform_simplex(1, make_rng(0))

    def test_outputs_are_distributions(self):
        draws = sample_uniform_simplex(5, make_rng(3), n=1000)
        assert all(is_label_distribution(row) for row in draws)

    def test_ks_uniform_marginal_l2(self):
        draws = sample_uniform_simplex(2, make_rng(4), n=10_000)
        assert kstest(draws[:, 0], "uniform").pvalue > 0.01

    def test_proposal_density_constant(self):
        assert log_uniform_simplex_density(2) == 0.0
        assert log_uniform_simplex_density(4) == pytest.approx(np.log(6), abs=1e-15)


class TestRng:
    def test_same_seed_same_stream(self):
        assert make_rng(7).uniform() == make_rng(7).uniform()

    def test_streams_differ(self):
        assert make_rng(7, stream=0).uniform() != make_rng(7, stream=1).uniform()


class TestDataset:
    def _ds(self, N=10, L=3, d=2, seed=0):
        rng = make_rng(seed)
        X = rng.standard_normal((N, d))
        Y = rng.dirichlet(np.ones(L), size=N)
        Y = Y / Y.sum(axis=1, keepdims=True)
        return LdlDataset(X, Y)

    def test_row_sum_validation(self):
        with pytest.raises(InvalidDistributionError):
            LdlDataset(np.zeros((2, 2)), np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_negative_label_rejected(self):
        with pytest.raises(InvalidDistributionError):
            LdlDataset(np.zeros((1, 2)), np.array([[1.5, -0.5]]))

    def test_split_partitions(self):
        ds = self._ds(N=20)
        a, b = ds.split((0.75, 0.25), seed=3)
        assert len(a) + len(b) == 20 and len(b) == 5
        merged = np.vstack([a.features, b.features])
        assert np.unique(merged, axis=0).shape[0] == 20

    def test_split_deterministic(self):
        ds = self._ds(N=20)
        a1, _ = ds.split((0.5, 0.5), seed=9)
        a2, _ = ds.split((0.5, 0.5), seed=9)
        np.testing.assert_array_equal(a1.features, a2.features)

    def test_split_too_small_rejected(self):
        ds = self._ds(N=3)
        with pytest.raises(DimensionError):
            ds.split((0.9, 0.05, 0.05), seed=0)
