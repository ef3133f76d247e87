import math
import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_allclose

from muonpp.exceptions import DegenerateInputError, InvalidInputError
from muonpp.services.correlation.dto import BoundaryRule, CorrelatedWeightSpec, Regime
from muonpp.services.correlation.implementations import (
    ExchangeableCorrelationModel,
    boundary_factor,
    classify_regime,
    conditional_rho,
    covariance_eigenvalues,
    fit_rho_exponent,
    rescale_on_trigger,
)
from muonpp.services.correlation.service import CorrelationService


class CorrelatedWeightSpecTests(unittest.TestCase):
    def test_properties(self):
        spec = CorrelatedWeightSpec(m=2, n=4, sigma_n=0.5, rho_n=0.1)
        self.assertEqual(spec.c, 0.5)
        self.assertEqual(spec.size, 8)
        self.assertAlmostEqual(spec.rho_lower_bound, -1.0 / 7.0)
        self.assertEqual(spec.to_dict(), {"m": 2, "n": 4, "sigma": 0.5, "rho": 0.1, "c": 0.5})

    def test_rejects_rho_below_the_psd_bound(self):
        with self.assertRaises(InvalidInputError):
            CorrelatedWeightSpec(m=2, n=2, sigma_n=1.0, rho_n=-0.34)

    def test_rejects_invalid_shapes_and_values(self):
        for kwargs in (
            {"m": 4, "n": 2, "sigma_n": 1.0, "rho_n": 0.0},
            {"m": 1, "n": 1, "sigma_n": 1.0, "rho_n": 0.0},
            {"m": 2, "n": 2, "sigma_n": -1.0, "rho_n": 0.0},
            {"m": 2, "n": 2, "sigma_n": 1.0, "rho_n": 1.5},
        ):
            with self.subTest(**kwargs):
                with self.assertRaises(InvalidInputError):
                    CorrelatedWeightSpec(**kwargs)

    def test_covariance_is_psd_just_above_the_bound(self):
        spec = CorrelatedWeightSpec(m=3, n=4, sigma_n=2.0, rho_n=-1.0 / 11.0 + 1e-9)
        bulk, top = covariance_eigenvalues(spec)
        self.assertGreater(bulk, 0.0)
        self.assertGreaterEqual(top, 0.0)


class SamplerTests(unittest.TestCase):
    def setUp(self):
        self.model = ExchangeableCorrelationModel()

    def test_full_correlation_gives_a_constant_matrix(self):
        draw = self.model.sample(CorrelatedWeightSpec(m=3, n=5, sigma_n=2.0, rho_n=1.0), seed=4)
        assert_allclose(draw.weight, np.full((3, 5), 2.0 * draw.z))

    def test_uncorrelated_moments(self):
        draw = self.model.sample(CorrelatedWeightSpec(m=100, n=100, sigma_n=3.0, rho_n=0.0), seed=0)
        self.assertLessEqual(abs(draw.weight.mean()), 4 * 3.0 / 100)
        self.assertLessEqual(abs(draw.weight.var() / 9.0 - 1.0), 0.05)

    def test_pairwise_correlation(self):
        spec = CorrelatedWeightSpec(m=2, n=2, sigma_n=1.0, rho_n=0.3)
        samples = np.array([self.model.sample(spec, seed).weight.ravel() for seed in range(200)])
        corr = np.corrcoef(samples, rowvar=False)
        mean_pairwise = corr[~np.eye(4, dtype=bool)].mean()
        standard_error = (1 - 0.3 ** 2) / math.sqrt(200)
        self.assertLessEqual(abs(mean_pairwise - 0.3), 3 * standard_error)

    def test_deterministic_in_seed_and_noise_is_reconstructible(self):
        spec = CorrelatedWeightSpec(m=4, n=6, sigma_n=0.7, rho_n=0.2)
        first = self.model.sample(spec, seed=11)
        second = self.model.sample(spec, seed=11)
        assert_allclose(first.weight, second.weight, rtol=0, atol=0)
        phi = self.model.reconstruct_noise(first, spec)
        expected = 0.7 * (math.sqrt(0.2) * first.z + math.sqrt(0.8) * phi)
        assert_allclose(first.weight, expected, atol=1e-14)

    def test_negative_correlation_at_the_bound_has_zero_mean(self):
        spec = CorrelatedWeightSpec(m=3, n=3, sigma_n=1.0, rho_n=-1.0 / 8.0)
        draw = self.model.sample(spec, seed=2)
        self.assertTrue(math.isnan(draw.z))
        self.assertAlmostEqual(draw.weight.sum(), 0.0, places=12)
        self.assertAlmostEqual(self.model.mom_rho(draw.weight), -1.0 / 8.0, places=12)


class MomentEstimatorTests(unittest.TestCase):
    def setUp(self):
        self.model = ExchangeableCorrelationModel()

    def test_constant_matrix(self):
        self.assertAlmostEqual(self.model.mom_rho(np.full((3, 4), -2.5)), 1.0, places=14)

    def test_zero_mean_matrix_hits_the_lower_bound(self):
        self.assertAlmostEqual(self.model.mom_rho(np.array([[1.0, -1.0], [-1.0, 1.0]])), -1.0 / 3.0, places=14)

    def test_zero_matrix(self):
        with self.assertRaises(DegenerateInputError):
            self.model.mom_rho(np.zeros((2, 2)))

    def test_single_entry(self):
        with self.assertRaises(InvalidInputError):
            self.model.mom_rho(np.ones((1, 1)))

    def test_concentrates_on_the_conditional_value(self):
        spec = CorrelatedWeightSpec(m=128, n=128, sigma_n=1.0, rho_n=0.05)
        deviations = []
        for seed in range(10):
            draw = self.model.sample(spec, seed)
            deviations.append(self.model.mom_rho(draw.weight) - conditional_rho(0.05, draw.z))
        self.assertLessEqual(np.mean(np.abs(deviations)), 0.01)

    def test_conditional_rho(self):
        self.assertAlmostEqual(conditional_rho(0.05, 1.0), 0.05)
        self.assertEqual(conditional_rho(0.5, 0.0), 0.0)
        with self.assertRaises(DegenerateInputError):
            conditional_rho(1.0, 0.0)


class PredictionTests(unittest.TestCase):
    def setUp(self):
        self.model = ExchangeableCorrelationModel()

    def test_frobenius(self):
        self.assertEqual(self.model.predict_frobenius(CorrelatedWeightSpec(2, 2, 0.0, 0.0)).predicted_norm, 0.0)
        spec = CorrelatedWeightSpec(512, 512, 1 / math.sqrt(512), 512.0 ** -2)
        prediction = self.model.predict_frobenius(spec)
        self.assertAlmostEqual(prediction.predicted_norm, math.sqrt(512), places=10)
        self.assertFalse(prediction.warning)

    def test_frobenius_warns_outside_small_rho(self):
        with self.assertLogs("muonpp.services.correlation", level="WARNING"):
            prediction = self.model.predict_frobenius(CorrelatedWeightSpec(4, 4, 1.0, 0.2))
        self.assertTrue(prediction.warning)

    def test_sub_critical(self):
        prediction = self.model.predict_spectral(CorrelatedWeightSpec(1024, 1024, 1 / 64, 1e-9), z=0.3)
        self.assertEqual(prediction.regime, Regime.SUB_CRITICAL)
        self.assertAlmostEqual(prediction.predicted_norm, 1.0, places=12)

    def test_super_critical(self):
        spec = CorrelatedWeightSpec(4096, 4096, 1.0, 4096 ** -0.5)
        prediction = self.model.predict_spectral(spec, z=2.0)
        self.assertEqual(prediction.regime, Regime.SUPER_CRITICAL)
        self.assertAlmostEqual(prediction.predicted_norm, math.sqrt(4096 * 4096 / 64) * 2.0, places=9)
        self.assertAlmostEqual(prediction.tau, 64.0)

    def test_boundary_branches(self):
        spec = CorrelatedWeightSpec(100, 100, 1.0, 0.01)
        below = self.model.predict_spectral(spec, z=0.5)
        self.assertEqual(below.regime, Regime.BOUNDARY)
        self.assertAlmostEqual(below.predicted_norm, 20.0, places=12)
        above = self.model.predict_spectral(spec, z=2.0)
        self.assertAlmostEqual(above.predicted_norm, 25.0, places=12)
        proof = self.model.predict_spectral(spec, z=2.0, boundary_rule="proof")
        self.assertEqual(proof.boundary_rule, BoundaryRule.PROOF)
        self.assertAlmostEqual(proof.predicted_norm, 25.0, places=12)

    def test_boundary_rules_disagree_between_the_indicators(self):
        # z^2 tau sqrt(c) = 1.125 > 1 while |z| c^(1/4) tau = 0.75 <= 1
        self.assertEqual(boundary_factor(1.5, 0.5, 1.0, BoundaryRule.PROOF), 1.0)
        self.assertGreater(boundary_factor(1.5, 0.5, 1.0, BoundaryRule.PROPOSITION), 1.0)

    def test_non_vanishing(self):
        prediction = self.model.predict_spectral(CorrelatedWeightSpec(10, 10, 1.0, 0.5), z=-1.0)
        self.assertEqual(prediction.regime, Regime.NON_VANISHING)
        self.assertAlmostEqual(prediction.predicted_norm, 10 * math.sqrt(0.5), places=12)

    def test_regime_cutoffs(self):
        self.assertEqual(classify_regime(CorrelatedWeightSpec(100, 100, 1.0, 0.0009)), Regime.SUB_CRITICAL)
        self.assertEqual(classify_regime(CorrelatedWeightSpec(100, 100, 1.0, 0.05)), Regime.BOUNDARY)
        self.assertEqual(classify_regime(CorrelatedWeightSpec(1000, 1000, 1.0, 0.05)), Regime.SUPER_CRITICAL)
        self.assertEqual(classify_regime(CorrelatedWeightSpec(10, 10, 1.0, 0.1)), Regime.NON_VANISHING)


class StableRankTests(unittest.TestCase):
    def setUp(self):
        self.model = ExchangeableCorrelationModel()

    def test_orthogonal_and_rank_one(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((7, 7)))
        self.assertAlmostEqual(self.model.stable_rank(q), 7.0, places=10)
        self.assertAlmostEqual(self.model.stable_rank(np.outer([1.0, 2.0], [3.0, 4.0, 5.0])), 1.0, places=12)

    def test_gaussian_quarter_width(self):
        rng = np.random.default_rng(1)
        ranks = [self.model.stable_rank(rng.standard_normal((256, 256)) / 16.0) for _ in range(20)]
        self.assertLessEqual(abs(np.median(ranks) / 64.0 - 1.0), 0.1)

    def test_zero_matrix(self):
        with self.assertRaises(DegenerateInputError):
            self.model.stable_rank(np.zeros((3, 3)))


class ExponentFitTests(unittest.TestCase):
    def test_exact_power_law(self):
        fit = fit_rho_exponent([(n, 5.0 / n) for n in (64, 128, 256)])
        self.assertAlmostEqual(fit.slope, -1.0, places=12)
        self.assertAlmostEqual(fit.intercept, math.log(5.0), places=10)
        self.assertAlmostEqual(fit.residual, 0.0, places=10)

    def test_constant(self):
        self.assertAlmostEqual(fit_rho_exponent([(64, 0.2), (256, 0.2)]).slope, 0.0, places=12)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(2)
        ns = [2 ** k for k in range(5, 13)]
        samples = [(n, 3.0 * n ** -1.5 * (1 + 0.05 * rng.standard_normal())) for n in ns]
        self.assertLessEqual(abs(fit_rho_exponent(samples).slope + 1.5), 0.1)

    def test_invalid_samples(self):
        for samples in ([(64, 0.1)], [(64, 0.1), (128, 0.0)], [(64, 0.1), (64, 0.2)]):
            with self.subTest(samples=samples):
                with self.assertRaises(InvalidInputError):
                    fit_rho_exponent(samples)


class TriggerTests(unittest.TestCase):
    def setUp(self):
        self.weight = np.random.default_rng(3).standard_normal((100, 100))

    def test_fires_once_above_threshold(self):
        outcome = rescale_on_trigger(self.weight, 0.1, 0.4, 1.0, already_fired=False)
        self.assertTrue(outcome.fired)
        self.assertAlmostEqual(outcome.threshold, 0.2)
        self.assertAlmostEqual(outcome.factor, 0.5)
        assert_allclose(outcome.weight, 0.5 * self.weight)

    def test_below_threshold(self):
        weight, fired = CorrelationService().rescale_on_trigger(self.weight, 0.1, 0.15, 1.0, False)
        self.assertFalse(fired)
        assert_allclose(weight, self.weight)

    def test_never_fires_twice(self):
        weight, fired = CorrelationService().rescale_on_trigger(self.weight, 0.1, 0.9, 1.0, True)
        self.assertTrue(fired)
        assert_allclose(weight, self.weight)

    def test_non_positive_estimates(self):
        with self.assertRaises(InvalidInputError):
            rescale_on_trigger(self.weight, -0.1, 0.4, 1.0, already_fired=False)
        with self.assertRaises(InvalidInputError):
            rescale_on_trigger(self.weight, 0.1, 0.4, 0.0, already_fired=False)


class CorrelationServiceTests(unittest.TestCase):
    def test_delegates_to_implementation(self):
        implementation = mock.Mock()
        implementation.predict_frobenius.return_value.predicted_norm = 4.0
        service = CorrelationService(implementation=implementation)
        spec = CorrelatedWeightSpec(2, 2, 1.0, 0.0)
        self.assertEqual(service.predict_frobenius(spec), 4.0)
        service.sample_correlated(spec, 7)
        implementation.sample.assert_called_once_with(spec, 7)
        service.predict_spectral(spec, 1.0)
        implementation.predict_spectral.assert_called_once_with(spec, 1.0, boundary_rule="proposition")

    def test_module_functions_exposed(self):
        service = CorrelationService()
        spec = CorrelatedWeightSpec(100, 100, 1.0, 0.05)
        self.assertEqual(service.classify_regime(spec), Regime.BOUNDARY)
        self.assertAlmostEqual(service.conditional_rho(0.05, 1.0), 0.05)
        self.assertEqual(service.covariance_eigenvalues(spec), covariance_eigenvalues(spec))


if __name__ == "__main__":
    unittest.main()
