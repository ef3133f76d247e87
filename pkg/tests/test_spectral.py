import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from muonpp.exceptions import DegenerateInputError, InvalidInputError
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.spectral.dto import MuonPPState, SpectralTarget
from muonpp.services.spectral.implementations import (
    CascadeNormalizer,
    DualSubgradientSolver,
    MuonBaselineOptimizer,
    TokenBudgetCalculator,
)
from muonpp.services.spectral.service import SpectralUpdateService, init_state, spectral_target


def normalized_random(rng, shape, S):
    weight = rng.standard_normal(shape)
    return S * weight / np.linalg.norm(weight, 2)


class SpectralTargetTests(unittest.TestCase):
    def test_target_value(self):
        self.assertEqual(spectral_target(24, 16).S, math.sqrt(24 / 16))
        self.assertEqual(spectral_target(24, 16).shape, (24, 16))

    def test_scaled_target(self):
        target = spectral_target(4, 4).scaled(0.5)
        self.assertAlmostEqual(target.S, 0.5)

    def test_invalid_dimensions(self):
        with self.assertRaises(InvalidInputError):
            SpectralTarget(0, 3)

    def test_init_state(self):
        state = init_state((3, 2))
        assert_allclose(state.momentum, np.zeros((3, 2)))
        self.assertEqual(state.step, 0)
        self.assertEqual(state.mu, 0.95)
        with self.assertRaises(InvalidInputError):
            init_state((3, 2), mu=1.0)


class AdmissibleEtaTests(unittest.TestCase):
    def setUp(self):
        self.service = SpectralUpdateService()

    def test_diagonal_weight_with_a_gap(self):
        self.assertAlmostEqual(self.service.admissible_eta(np.diag([1.0, 0.2])), 0.8, places=10)

    def test_scaled_orthogonal_is_zero(self):
        q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))
        self.assertEqual(self.service.admissible_eta(3.0 * q), 0.0)

    def test_random_matches_decomposition(self):
        weight = np.random.default_rng(1).standard_normal((32, 32))
        s = np.linalg.svd(weight, compute_uv=False)
        self.assertLessEqual(abs(self.service.admissible_eta(weight) - (s[0] - s[1]) / s[0]), 1e-8)

    def test_zero_matrix(self):
        with self.assertRaises(DegenerateInputError):
            self.service.admissible_eta(np.zeros((2, 2)))


class MuonPlusPlusStepTests(unittest.TestCase):
    def setUp(self):
        self.service = SpectralUpdateService(msign_mode="exact")
        self.linalg = DenseLinalgBackend()

    def test_hand_computed_two_by_two(self):
        state = init_state((2, 2), mu=0.9)
        grad = np.array([[0.0, 0.0], [0.0, -1.0]])
        new_weight, new_state, report = self.service.muonpp_step(state, np.diag([1.0, 0.2]), grad, 0.5)
        assert_allclose(report.delta, grad, atol=1e-10)
        assert_allclose(new_weight, np.diag([1.0, 0.7]), atol=1e-10)
        self.assertAlmostEqual(report.spectral_norm_after, 1.0, places=10)
        self.assertAlmostEqual(report.admissible_eta, 0.8, places=10)
        self.assertAlmostEqual(report.gap_before, 0.8, places=10)
        self.assertFalse(report.rescaled)
        self.assertEqual(new_state.step, 1)
        assert_allclose(new_state.momentum, grad)

    def test_aligned_gradient_gives_zero_update(self):
        weight = np.diag([1.0, 0.2])
        new_weight, _, report = self.service.muonpp_step(init_state((2, 2)), weight, np.diag([1.0, 0.0]), 0.5)
        assert_allclose(report.delta, np.zeros((2, 2)))
        assert_allclose(new_weight, weight)

    def test_norm_preserved_inside_admissible_range(self):
        rng = np.random.default_rng(2)
        S = spectral_target(24, 16).S
        for _ in range(5):
            weight = normalized_random(rng, (24, 16), S)
            eta = 0.9 * self.service.admissible_eta(weight)
            new_weight, _, report = self.service.muonpp_step(
                init_state((24, 16)), weight, rng.standard_normal((24, 16)), eta
            )
            self.assertLessEqual(abs(np.linalg.norm(new_weight, 2) - S), 1e-8 * S)

    def test_invariants_across_shapes(self):
        rng = np.random.default_rng(11)
        shapes = [(8, 8), (24, 16), (64, 64)]
        for index in range(500):
            shape = shapes[index % len(shapes)]
            S = spectral_target(*shape).S
            weight = normalized_random(rng, shape, S)
            info = self.linalg.top_two_singular(weight)
            eta = 0.9 * self.service.admissible_eta(weight)
            new_weight, _, report = self.service.muonpp_step(
                init_state(shape), weight, rng.standard_normal(shape), eta
            )
            with self.subTest(index=index, shape=shape):
                self.assertLessEqual(np.max(np.abs(info.u1 @ report.delta)), 1e-10)
                self.assertLessEqual(np.max(np.abs(report.delta @ info.v1)), 1e-10)
                self.assertLessEqual(np.linalg.norm(new_weight @ info.v1 - S * info.u1), 1e-8 * S)
                self.assertLessEqual(abs(np.linalg.norm(new_weight, 2) - S), 1e-8 * S)

    def test_delta_respects_the_top_pair(self):
        rng = np.random.default_rng(3)
        weight = rng.standard_normal((10, 7))
        _, _, report = self.service.muonpp_step(init_state((10, 7)), weight, rng.standard_normal((10, 7)), 0.1)
        info = self.linalg.top_two_singular(weight)
        self.assertLessEqual(np.max(np.abs(info.u1 @ report.delta)), 1e-10)
        self.assertLessEqual(np.max(np.abs(report.delta @ info.v1)), 1e-10)
        self.assertAlmostEqual(np.linalg.norm(report.delta, 2), 1.0, places=10)

    def test_momentum_accumulates(self):
        rng = np.random.default_rng(4)
        previous = rng.standard_normal((5, 4))
        grad = rng.standard_normal((5, 4))
        state = MuonPPState(momentum=previous, mu=0.5, target=spectral_target(5, 4), step=3)
        for nesterov in (False, True):
            _, new_state, report = self.service.muonpp_step(
                state, rng.standard_normal((5, 4)), grad, 0.1, nesterov=nesterov
            )
            assert_allclose(new_state.momentum, 0.5 * previous + grad)
            self.assertEqual(report.step, 4)

    def test_nesterov_changes_the_direction(self):
        rng = np.random.default_rng(5)
        state = MuonPPState(momentum=rng.standard_normal((6, 5)), mu=0.9, target=spectral_target(6, 5))
        weight, grad = rng.standard_normal((6, 5)), rng.standard_normal((6, 5))
        _, _, plain = self.service.muonpp_step(state, weight, grad, 0.1)
        _, _, nesterov = self.service.muonpp_step(state, weight, grad, 0.1, nesterov=True)
        self.assertGreater(np.linalg.norm(plain.delta - nesterov.delta), 1e-6)

    def test_iterative_mode_reports_residual(self):
        rng = np.random.default_rng(6)
        weight = rng.standard_normal((8, 8))
        _, _, report = self.service.muonpp_step(
            init_state((8, 8)), weight, rng.standard_normal((8, 8)), 0.1, msign_mode="iterative"
        )
        self.assertGreaterEqual(report.delta_residual, 0.0)
        self.assertEqual(set(report.to_dict()), {
            "step", "eta", "S", "gap_before", "admissible_eta", "spectral_norm_after", "rescaled", "delta_residual"
        })

    def test_invalid_inputs(self):
        state = init_state((2, 2))
        with self.assertRaises(InvalidInputError):
            self.service.muonpp_step(state, np.eye(2), np.ones((2, 3)), 0.1)
        with self.assertRaises(InvalidInputError):
            self.service.muonpp_step(state, np.eye(2), np.array([[np.inf, 0.0], [0.0, 1.0]]), 0.1)
        with self.assertRaises(InvalidInputError):
            self.service.muonpp_step(state, np.eye(2), np.eye(2), -0.1)
        with self.assertRaises(InvalidInputError):
            self.service.muonpp_step(init_state((3, 2)), np.eye(2), np.eye(2), 0.1)


class RescaleStepTests(unittest.TestCase):
    def setUp(self):
        self.service = SpectralUpdateService(msign_mode="exact")

    def test_scalar_rescaling(self):
        new_weight, _, report = self.service.muonpp_rescale_step(
            init_state((2, 2)), np.diag([2.0, 0.4]), np.diag([1.0, 0.0]), 0.1
        )
        assert_allclose(new_weight, np.diag([1.0, 0.2]), atol=1e-12)
        self.assertTrue(report.rescaled)

    def test_equivalent_to_projection_inside_admissible_range(self):
        weight = np.diag([1.0, 0.2])
        grad = np.array([[0.0, 0.0], [0.0, -1.0]])
        plain, _, _ = self.service.muonpp_step(init_state((2, 2)), weight, grad, 0.5)
        rescaled, _, report = self.service.muonpp_rescale_step(init_state((2, 2)), weight, grad, 0.5)
        assert_allclose(rescaled, plain, atol=1e-10)
        self.assertFalse(report.rescaled)

    def test_random_equivalence(self):
        rng = np.random.default_rng(7)
        S = spectral_target(12, 9).S
        weight = normalized_random(rng, (12, 9), S)
        grad = rng.standard_normal((12, 9))
        eta = 0.9 * self.service.admissible_eta(weight)
        plain, _, _ = self.service.muonpp_step(init_state((12, 9)), weight, grad, eta)
        rescaled, _, _ = self.service.muonpp_rescale_step(init_state((12, 9)), weight, grad, eta)
        assert_allclose(rescaled, plain, atol=1e-10)

    def test_norm_restored_outside_admissible_range(self):
        rng = np.random.default_rng(8)
        S = spectral_target(16, 16).S
        weight = normalized_random(rng, (16, 16), S)
        eta = 2.0 * self.service.admissible_eta(weight)
        new_weight, _, report = self.service.muonpp_rescale_step(
            init_state((16, 16)), weight, rng.standard_normal((16, 16)), eta
        )
        self.assertLessEqual(abs(np.linalg.norm(new_weight, 2) - S), 1e-12 * S)
        self.assertAlmostEqual(report.spectral_norm_after, S, places=12)


class MuonBaselineTests(unittest.TestCase):
    def setUp(self):
        self.service = SpectralUpdateService(msign_mode="exact")

    def test_diagonal_momentum(self):
        weight = np.eye(2)
        new_weight, new_state = self.service.muon_baseline_step(init_state((2, 2)), weight, np.diag([4.0, -2.0]), 0.1)
        assert_allclose(new_weight, weight - 0.1 * np.diag([1.0, -1.0]), atol=1e-14)
        self.assertEqual(new_state.step, 1)

    def test_orthogonal_momentum_is_its_own_polar_factor(self):
        q, _ = np.linalg.qr(np.random.default_rng(9).standard_normal((5, 5)))
        _, _, report = MuonBaselineOptimizer(msign_mode="exact").step(init_state((5, 5)), np.zeros((5, 5)), q, 1.0)
        assert_allclose(report.delta, q, atol=1e-12)

    def test_match_scaling_multiplier(self):
        self.assertAlmostEqual(MuonBaselineOptimizer.scale_multiplier((25, 25), True), 1.0)
        self.assertEqual(MuonBaselineOptimizer.scale_multiplier((25, 25), False), 1.0)
        self.assertAlmostEqual(MuonBaselineOptimizer.scale_multiplier((100, 16), True), 2.0)


class CascadeTests(unittest.TestCase):
    def setUp(self):
        self.service = SpectralUpdateService()

    def test_shrinks_the_applied_update(self):
        new_weight, net = self.service.cascade_step(np.diag([1.0, 0.2]), np.diag([1.0, 0.0]), 0.5)
        assert_allclose(new_weight, np.diag([1.0, 0.4]), atol=1e-12)
        self.assertAlmostEqual(net, 0.2, places=12)

    def test_on_target_half_step_is_untouched(self):
        weight = np.diag([1.0, 0.5])
        grad = np.diag([0.0, 1.0])
        new_weight, net = self.service.cascade_step(weight, grad, 0.25)
        assert_allclose(new_weight, np.diag([1.0, 0.25]), atol=1e-12)
        self.assertAlmostEqual(net, 0.25, places=12)

    def test_zero_eta_renormalizes(self):
        weight = np.random.default_rng(10).standard_normal((8, 2))
        new_weight, _ = self.service.cascade_step(weight, np.ones((8, 2)), 0.0, sigma_mult=3.0)
        assert_allclose(new_weight, 3.0 * 2.0 * weight / np.linalg.norm(weight, 2), atol=1e-12)

    def test_zero_gradient(self):
        with self.assertRaises(DegenerateInputError):
            CascadeNormalizer().apply(np.eye(2), np.zeros((2, 2)), 0.1)


class DualSolverTests(unittest.TestCase):
    def setUp(self):
        self.linalg = DenseLinalgBackend()
        self.solver = DualSubgradientSolver(self.linalg)

    def test_orthogonal_gradient_keeps_nu_at_zero(self):
        e1 = np.array([1.0, 0.0, 0.0])
        result = self.solver.solve(np.diag([0.0, 2.0, 1.0]), e1, e1)
        self.assertEqual(result.nu_min, 0.0)
        self.assertAlmostEqual(result.objective, 3.0, places=12)
        assert_allclose(result.delta, np.diag([0.0, 1.0, 1.0]), atol=1e-12)
        self.assertFalse(result.degenerate)

    def test_rank_one_cancellation_is_degenerate(self):
        e1 = np.array([1.0, 0.0])
        result = self.solver.solve(np.outer(e1, e1), e1, e1)
        self.assertEqual(result.nu_min, -1.0)
        self.assertEqual(result.objective, 0.0)
        self.assertTrue(result.degenerate)
        assert_allclose(result.delta, np.zeros((2, 2)))

    def test_dual_dominates_projection(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            grad = rng.standard_normal((8, 6))
            info = self.linalg.top_two_singular(rng.standard_normal((8, 6)))
            dual = self.solver.solve(grad, info.u1, info.v1)
            projected = self.linalg.polar_factor(self.linalg.project_out_top(grad, info.u1, info.v1)).matrix
            self.assertGreaterEqual(np.sum(grad * dual.delta), np.sum(grad * projected) - 1e-6)
            self.assertLessEqual(np.linalg.norm(dual.delta, 2), 1.0 + 1e-8)
            self.assertLessEqual(dual.objective, self.linalg.nuclear_norm(grad) + 1e-12)

    def test_service_passes_iterations(self):
        rng = np.random.default_rng(12)
        info = self.linalg.top_two_singular(rng.standard_normal((4, 3)))
        result = SpectralUpdateService().dual_delta(rng.standard_normal((4, 3)), info.u1, info.v1, iterations=3)
        self.assertLessEqual(result.iterations, 3)


class BudgetAndNormTests(unittest.TestCase):
    def setUp(self):
        self.service = SpectralUpdateService()

    def test_worked_budget(self):
        result = self.service.token_budget_threshold(0.001, 10000, 0.02, 2, 1)
        self.assertEqual(result.T_threshold, 2000.0)
        self.assertEqual(result.token_threshold, 2000.0)

    def test_zero_initialization(self):
        self.assertEqual(TokenBudgetCalculator().threshold(0.001, 10000, 0.0, 2, 1).T_threshold, 0.0)

    def test_batch_size_is_linear(self):
        one = self.service.token_budget_threshold(0.01, 64, 0.02, 4, 8)
        two = self.service.token_budget_threshold(0.01, 64, 0.02, 4, 16)
        self.assertEqual(one.T_threshold, two.T_threshold)
        self.assertAlmostEqual(two.token_threshold, 2.0 * one.token_threshold)

    def test_invalid_budget_inputs(self):
        for args in ((0.0, 100, 0.02, 2, 1), (0.001, 0, 0.02, 2, 1), (0.001, 100, -0.1, 2, 1)):
            with self.subTest(args=args):
                with self.assertRaises(InvalidInputError):
                    self.service.token_budget_threshold(*args)

    def test_gap_condition_counterexample(self):
        norm = self.service.norm_after_update(np.diag([1.0, 0.2]), np.diag([0.0, -1.0]), 0.9, 1.0)
        self.assertLessEqual(abs(norm - 1.1), 1e-12)


if __name__ == "__main__":
    unittest.main()
