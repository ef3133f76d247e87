import math
from typing import Optional, Tuple

import numpy as np

from muonpp.conf import settings
from muonpp.exceptions import InvalidInputError
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.linalg.matrix import as_matrix, require_same_shape
from muonpp.services.spectral.dto import BudgetThreshold, DualSolve, MuonPPState, SpectralTarget, StepReport
from muonpp.services.spectral.implementations import (
    CascadeNormalizer,
    DualSubgradientSolver,
    MuonBaselineOptimizer,
    MuonPlusPlusOptimizer,
    MuonPlusPlusRescaleOptimizer,
    TokenBudgetCalculator,
    admissible_eta_from,
)


def spectral_target(n_out: int, n_in: int) -> SpectralTarget:
    return SpectralTarget(n_out=n_out, n_in=n_in)


def init_state(shape: Tuple[int, int], mu: Optional[float] = None, target: Optional[SpectralTarget] = None):
    """Fresh optimizer state: zero momentum at step 0."""
    mu = settings.DEFAULT_MOMENTUM if mu is None else mu
    target = target or spectral_target(*shape)
    return MuonPPState.zeros(target, mu)


class SpectralUpdateService:
    """Facade over the optimizer family sharing one linear-algebra backend."""

    def __init__(self, linalg: Optional[AbstractLinalgBackend] = None, msign_mode: Optional[str] = None):
        self.linalg = linalg or DenseLinalgBackend()
        self.msign_mode = msign_mode or settings.MSIGN_MODE

    def admissible_eta(self, weight) -> float:
        return admissible_eta_from(self.linalg.top_two_singular(weight))

    def muonpp_step(
        self, state: MuonPPState, weight, grad, eta: float, nesterov: bool = False, msign_mode: Optional[str] = None
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        optimizer = MuonPlusPlusOptimizer(self.linalg, msign_mode=msign_mode or self.msign_mode, nesterov=nesterov)
        return optimizer.step(state, weight, grad, eta)

    def muonpp_rescale_step(
        self, state: MuonPPState, weight, grad, eta: float, nesterov: bool = False, msign_mode: Optional[str] = None
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        optimizer = MuonPlusPlusRescaleOptimizer(
            self.linalg, msign_mode=msign_mode or self.msign_mode, nesterov=nesterov
        )
        return optimizer.step(state, weight, grad, eta)

    def muon_baseline_step(
        self,
        state: MuonPPState,
        weight,
        grad,
        eta: float,
        match_scaling: bool = False,
        nesterov: bool = False,
        msign_mode: Optional[str] = None,
    ) -> Tuple[np.ndarray, MuonPPState]:
        optimizer = MuonBaselineOptimizer(
            self.linalg, msign_mode=msign_mode or self.msign_mode, nesterov=nesterov, match_scaling=match_scaling
        )
        new_weight, new_state, _ = optimizer.step(state, weight, grad, eta)
        return new_weight, new_state

    def cascade_step(self, weight, grad, eta: float, sigma_mult: float = 1.0) -> Tuple[np.ndarray, float]:
        return CascadeNormalizer(self.linalg, sigma_mult=sigma_mult).apply(weight, grad, eta)

    def dual_delta(
        self, grad, u1, v1, step_size: Optional[float] = None, iterations: Optional[int] = None
    ) -> DualSolve:
        return DualSubgradientSolver(self.linalg).solve(grad, u1, v1, step_size=step_size, iterations=iterations)

    def token_budget_threshold(
        self, eta_peak: float, n: int, initializer_range: float, base_width: int, batch_size: int
    ) -> BudgetThreshold:
        return TokenBudgetCalculator().threshold(eta_peak, n, initializer_range, base_width, batch_size)

    def norm_after_update(self, weight, delta, eta: float, S: float) -> float:
        """||W - eta * S * delta||."""
        weight = as_matrix(weight, "W")
        delta = as_matrix(delta, "delta")
        require_same_shape(weight, delta, "W", "delta")
        if not math.isfinite(eta * S):
            raise InvalidInputError(f"eta * S must be finite, got {eta} * {S}")
        return self.linalg.spectral_norm(weight - eta * S * delta)
