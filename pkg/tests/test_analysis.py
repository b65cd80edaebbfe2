import numpy as np
import pytest

from red_sure.analysis import (
    feature_entropy,
    noise_decay_check,
    residual_decay_term,
    squared_error_decomposition,
    weight_norm,
)
from red_sure.nnkit import DenseLayer

GAUSS_ENTROPY = 0.5 * np.log(2 * np.pi * np.e)


class TestNoiseDecay:
    def test_sigma_zero_exact(self):
        rep = noise_decay_check([1.0, -2.0], [0.5, 0.5], 0.3, 0.0, 1000)
        assert rep.empirical_lhs == rep.analytic_rhs == pytest.approx((0.5 - 1.0 - 0.3) ** 2)
        assert rep.passed

    def test_chi_square_one_dof(self):
        rep = noise_decay_check([1.0, 0.0], [0.0, 0.0], 0.0, 1.0, 100_000, np.random.default_rng(0))
        assert rep.analytic_rhs == 1.0
        assert rep.passed
        assert rep.empirical_lhs == pytest.approx(1.0, abs=4 * rep.std_err)

    def test_doubling_w_quadruples_penalty(self):
        w, z, y, s = np.array([0.5, 1.0]), np.zeros(2), 0.0, 0.7
        a = noise_decay_check(w, z, y, s, 1000).analytic_rhs
        b = noise_decay_check(2 * w, z, y, s, 1000).analytic_rhs
        assert b == pytest.approx(4 * a)

    def test_not_k_times_penalty(self):
        # K*sigma^2*||w||^2 would give 8 here; the Monte-Carlo mean sits at 2
        rep = noise_decay_check(np.ones(4) / np.sqrt(2), np.zeros(4), 0.0, 1.0, 100_000, np.random.default_rng(1))
        assert rep.passed and rep.analytic_rhs == pytest.approx(2.0)
        assert abs(rep.empirical_lhs - 8.0) > 100 * rep.std_err

    def test_report_dict_has_pass_key(self):
        d = noise_decay_check([1.0], [0.0], 0.0, 0.0, 1000).to_dict()
        assert d["pass"] is True and "note" in d


class TestResidual:
    def test_examples(self):
        assert residual_decay_term([1.0, 0.0], [0.0, 2.0]) == 0.0
        assert residual_decay_term([1.0, 1.0], [1.0, 1.0]) == 4.0
        assert residual_decay_term([1.0, 3.0], [0.0, 0.0]) == 0.0

    def test_random_pairs_match_cosine_form(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            w, e = rng.normal(size=(2, 6))
            cos = w @ e / (np.linalg.norm(w) * np.linalg.norm(e))
            explicit = cos**2 * (e @ e) * (w @ w)
            assert abs(residual_decay_term(w, e) - explicit) <= 1e-12 * max(1.0, explicit)

    def test_expansion_with_cross_term(self, rng):
        w, z, e = rng.normal(size=(3, 5))
        y = 0.7
        lhs = (w @ (z + e) - y) ** 2
        assert abs(lhs - sum(squared_error_decomposition(w, z, e, y))) <= 1e-12 * max(1.0, lhs)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            residual_decay_term([1.0], [1.0, 2.0])


class TestEntropy:
    def test_gaussian(self):
        x = np.random.default_rng(0).standard_normal((10_000, 1))
        assert feature_entropy(x) == pytest.approx(GAUSS_ENTROPY, abs=0.05)

    def test_uniform(self):
        x = np.random.default_rng(0).uniform(size=10_000)
        assert feature_entropy(x) == pytest.approx(0.0, abs=0.05)

    def test_multivariate_gaussian(self):
        x = np.random.default_rng(2).standard_normal((10_000, 3))
        assert feature_entropy(x) == pytest.approx(3 * GAUSS_ENTROPY, abs=0.15)

    @pytest.mark.parametrize("c", [0.1, 3.0, -2.0])
    def test_scaling_law(self, c):
        x = np.random.default_rng(3).standard_normal((4000, 2))
        K = x.shape[1]
        assert feature_entropy(c * x) - feature_entropy(x) == pytest.approx(K * np.log(abs(c)), abs=0.05 * K)

    def test_permutation_invariant(self, rng):
        x = rng.normal(size=(500, 3))
        assert feature_entropy(x) == feature_entropy(x[rng.permutation(500)])

    def test_duplicates_warn(self):
        x = np.zeros((10, 2))
        with pytest.warns(RuntimeWarning, match="duplicate"):
            value = feature_entropy(x)
        assert np.isfinite(value)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            feature_entropy(np.zeros((1, 2)))


class TestWeightNorm:
    def test_examples(self):
        assert weight_norm(np.zeros((2, 3))) == 0.0
        assert weight_norm(np.eye(2)) == pytest.approx(np.sqrt(2))
        assert weight_norm(np.array([[3.0], [4.0]])) == 5.0

    def test_bias_excluded(self):
        assert weight_norm(DenseLayer(np.array([[3.0, 4.0]]), np.array([100.0]))) == 5.0
