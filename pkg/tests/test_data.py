import numpy as np
import pytest

from sbdc_lab.data import (Dataset2D, apply_asymmetric_noise, apply_idn_noise,
                           apply_noise, apply_symmetric_noise,
                           gaussian_mixture_density, idn_flip_probabilities,
                           load_dataset_csv, make_gaussian_mixture,
                           make_two_moons, save_dataset_csv, truncated_normal)
from sbdc_lab.metrics import BayesClassifier


class TestTwoMoons:
    def test_noiseless_class0_on_unit_arc(self):
        ds = make_two_moons(400, noise_std=0.0, seed=0)
        arc = ds.x[ds.y_true == 0]
        assert np.allclose(np.linalg.norm(arc, axis=1), 1.0, atol=1e-12)
        assert np.all(arc[:, 1] >= -1e-12)

    def test_balanced_counts(self):
        ds = make_two_moons(1000, noise_std=0.1, seed=3)
        assert int((ds.y_true == 0).sum()) == 500
        assert int((ds.y_true == 1).sum()) == 500

    def test_odd_n_balanced_up_to_one(self):
        ds = make_two_moons(1001, noise_std=0.1, seed=3)
        c0, c1 = int((ds.y_true == 0).sum()), int((ds.y_true == 1).sum())
        assert abs(c0 - c1) <= 1

    def test_bayes_oracle_perfect_on_noiseless(self):
        ds = make_two_moons(500, noise_std=0.0, seed=0)
        clf = BayesClassifier.for_two_moons()
        assert np.all(clf.predict(ds.x) == ds.y_true)

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            make_two_moons(1)

    def test_deterministic_given_seed(self):
        a = make_two_moons(100, noise_std=0.2, seed=9)
        b = make_two_moons(100, noise_std=0.2, seed=9)
        assert np.array_equal(a.x, b.x)


class TestGaussianMixture:
    def test_empirical_means_near_centers(self):
        means = [[-2.0, 0.0], [2.0, 0.0]]
        ds = make_gaussian_mixture(2, means, np.eye(2), 2000, seed=1)
        for c in (0, 1):
            emp = ds.x[ds.y_true == c].mean(axis=0)
            assert np.linalg.norm(emp - means[c]) < 0.15

    def test_empty_dataset(self):
        ds = make_gaussian_mixture(2, [[-1, 0], [1, 0]], np.eye(2), 0, seed=0)
        assert ds.n == 0

    def test_analytic_density_matches_formula(self):
        means = np.array([[0.0, 0.0], [2.0, 1.0]])
        cov = np.array([[0.5, 0.1], [0.1, 0.3]])
        pt = np.array([[0.7, -0.2]])
        dens = gaussian_mixture_density(pt, means, cov)
        expected = 0.0
        inv = np.linalg.inv(cov)
        for m in means:
            d = pt[0] - m
            expected += 0.5 * np.exp(-0.5 * d @ inv @ d) / (
                2 * np.pi * np.sqrt(np.linalg.det(cov)))
        assert np.allclose(dens[0], expected, rtol=1e-12)

    def test_singular_covariance_rejected(self):
        with pytest.raises(ValueError, match="positive definite"):
            make_gaussian_mixture(2, [[-1, 0], [1, 0]], np.zeros((2, 2)), 10)

    def test_coincident_means_rejected(self):
        with pytest.raises(ValueError, match="coincide"):
            make_gaussian_mixture(2, [[1, 1], [1, 1]], np.eye(2), 10)


class TestSymmetricNoise:
    def test_rate_zero_is_identity(self):
        ds = make_two_moons(300, seed=0)
        out = apply_symmetric_noise(ds, 0.0, seed=1)
        assert np.array_equal(out.y_obs, ds.y_true)

    def test_rate_one_two_classes_flips_half(self):
        ds = make_two_moons(20000, seed=0)
        out = apply_symmetric_noise(ds, 1.0, seed=2)
        # replacement may equal the original: expected flips = rate*(K-1)/K
        p = 0.5
        sigma = np.sqrt(p * (1 - p) / ds.n)
        assert abs(out.flip_fraction - p) < 3 * sigma

    def test_rate_half_flip_fraction_band(self):
        ds = make_two_moons(50000, seed=0)
        out = apply_symmetric_noise(ds, 0.5, seed=3)
        assert 0.24 <= out.flip_fraction <= 0.26

    def test_preserves_x_and_true_labels(self):
        ds = make_two_moons(500, seed=0)
        out = apply_symmetric_noise(ds, 0.7, seed=4)
        assert np.array_equal(out.x, ds.x)
        assert np.array_equal(out.y_true, ds.y_true)

    def test_rate_out_of_range(self):
        ds = make_two_moons(10, seed=0)
        with pytest.raises(ValueError):
            apply_symmetric_noise(ds, 1.5)


class TestAsymmetricNoise:
    def test_identity_flip_map_unchanged(self):
        ds = make_two_moons(500, seed=0)
        out = apply_asymmetric_noise(ds, 0.8, {0: 0, 1: 1}, seed=5)
        assert np.array_equal(out.y_obs, ds.y_true)

    def test_swap_map_rate_within_band(self):
        ds = make_two_moons(20000, seed=0)
        out = apply_asymmetric_noise(ds, 0.2, {0: 1, 1: 0}, seed=6)
        sigma = np.sqrt(0.2 * 0.8 / ds.n)
        assert abs(out.flip_fraction - 0.2) < 3 * sigma

    def test_flips_land_only_on_mapped_class(self):
        means = [[-3, 0], [0, 0], [3, 0]]
        ds = make_gaussian_mixture(3, means, np.eye(2), 3000, seed=7)
        fm = {0: 1, 1: 2, 2: 0}
        out = apply_asymmetric_noise(ds, 0.5, fm, seed=8)
        flipped = out.corrupt_mask
        expected = np.array([fm[c] for c in out.y_true[flipped]])
        assert np.array_equal(out.y_obs[flipped], expected)


class TestInstanceDependentNoise:
    def test_probability_rows_valid_and_keep_prob(self):
        ds = make_two_moons(2000, seed=0)
        probs, q, w = idn_flip_probabilities(ds, 0.4, seed=9)
        assert np.all(probs >= 0.0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        keep = probs[np.arange(ds.n), ds.y_true]
        assert np.allclose(keep, 1.0 - q, atol=1e-12)
        assert w.shape == (2, 2, 2)

    def test_rate_zero_flip_fraction_matches_truncated_normal_mass(self):
        # q ~ truncnormal(0, 0.1^2, [0,1]) is half-normal with mean ~0.0798,
        # so the expected flip fraction equals mean(q), not a near-zero value
        ds = make_two_moons(10000, seed=0)
        probs, q, _ = idn_flip_probabilities(ds, 0.0, seed=10)
        out = apply_idn_noise(ds, 0.0, seed=10)
        expected = q.mean()
        sigma = np.sqrt(np.sum(q * (1 - q))) / ds.n
        assert abs(out.flip_fraction - expected) < 4 * sigma
        assert abs(expected - 0.1 * np.sqrt(2 / np.pi)) < 0.005

    def test_larger_q_smaller_keep_probability(self):
        ds = make_two_moons(100, seed=0)
        probs, q, _ = idn_flip_probabilities(ds, 0.3, seed=11)
        keep = probs[np.arange(ds.n), ds.y_true]
        order = np.argsort(q)
        assert np.all(np.diff(keep[order]) <= 1e-12)

    def test_empirical_rate_tracks_q_mean(self):
        ds = make_two_moons(20000, seed=0)
        for seed in range(3):
            probs, q, _ = idn_flip_probabilities(ds, 0.4, seed=seed)
            out = apply_idn_noise(ds, 0.4, seed=seed)
            sigma = np.sqrt(np.sum(q * (1 - q))) / ds.n
            assert abs(out.flip_fraction - q.mean()) < 3 * sigma


class TestNoiseInvariants:
    @pytest.mark.parametrize("kind,rate", [("symmetric", 0.3),
                                           ("asymmetric", 0.25),
                                           ("instance_dependent", 0.35)])
    def test_operators_only_rewrite_observed_labels(self, kind, rate):
        ds = make_two_moons(1000, seed=1)
        out = apply_noise(ds, kind, rate, seed=12)
        assert np.array_equal(out.x, ds.x)
        assert np.array_equal(out.y_true, ds.y_true)

    def test_symmetric_rate_within_3sigma_across_10_seeds(self):
        ds = make_two_moons(20000, seed=2)
        p = 0.3 * 0.5  # rate * (K-1)/K
        sigma = np.sqrt(p * (1 - p) / ds.n)
        for seed in range(10):
            out = apply_symmetric_noise(ds, 0.3, seed=seed)
            assert abs(out.flip_fraction - p) < 3 * sigma

    def test_unknown_kind_lists_valid_kinds(self):
        ds = make_two_moons(10, seed=0)
        with pytest.raises(ValueError, match="symmetric"):
            apply_noise(ds, "bogus", 0.1)

    def test_truncated_normal_stays_in_bounds(self):
        rng = np.random.default_rng(0)
        q = truncated_normal(0.5, 0.3, 0.0, 1.0, 5000, rng)
        assert q.min() >= 0.0 and q.max() <= 1.0


class TestDatasetCsv:
    def test_round_trip_lossless(self, tmp_path):
        ds = make_two_moons(200, noise_std=0.17, seed=13)
        noisy = apply_symmetric_noise(ds, 0.4, seed=14)
        noisy.r[:50] = 1.0
        noisy.r[50:100] = 0.0
        path = tmp_path / "data.csv"
        save_dataset_csv(path, noisy)
        back = load_dataset_csv(path)
        assert np.array_equal(back.x, noisy.x)
        assert np.array_equal(back.y_true, noisy.y_true)
        assert np.array_equal(back.y_obs, noisy.y_obs)
        known = ~np.isnan(noisy.r)
        assert np.array_equal(np.isnan(back.r), ~known)
        assert np.array_equal(back.r[known], noisy.r[known])

    def test_invariant_checks(self):
        with pytest.raises(ValueError):
            Dataset2D(np.zeros((3, 2)), np.array([0, 1, 2]), np.array([0, 1, 2]),
                      n_classes=2)
        with pytest.raises(ValueError):
            Dataset2D(np.zeros((2, 2)), np.array([0, 1]), np.array([0, 1]),
                      n_classes=2, r=np.array([1.5, 0.0]))
