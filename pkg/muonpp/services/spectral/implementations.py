import logging
import math
from typing import Optional, Tuple

import numpy as np

from muonpp.conf import settings
from muonpp.exceptions import DegenerateInputError, InvalidInputError
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.dto import PolarFactor, SingularInfo
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.linalg.matrix import as_matrix, as_unit_vector, require_same_shape
from muonpp.services.spectral.abstract import AbstractSpectralOptimizer
from muonpp.services.spectral.dto import BudgetThreshold, DualSolve, MuonPPState, StepReport


def admissible_eta_from(info: SingularInfo, degenerate_rtol: Optional[float] = None) -> float:
    """(sigma1 - sigma2) / sigma1, or 0 when the top of the spectrum is degenerate."""
    degenerate_rtol = degenerate_rtol or settings.DEGENERATE_GAP_RTOL
    if info.sigma1 == 0.0 or info.is_degenerate(degenerate_rtol):
        return 0.0
    return info.gap / info.sigma1


def _validate_step_inputs(state: MuonPPState, weight, grad, eta: float) -> Tuple[np.ndarray, np.ndarray]:
    weight = as_matrix(weight, "W")
    grad = as_matrix(grad, "G")
    require_same_shape(weight, grad, "W", "G")
    require_same_shape(state.momentum, weight, "momentum", "W")
    if state.target.shape != weight.shape:
        raise InvalidInputError(f"spectral target is {state.target.shape}, weight is {weight.shape}")
    if state.step < 0:
        raise InvalidInputError(f"state.step must be non-negative, got {state.step}")
    if not (math.isfinite(eta) and eta >= 0):
        raise InvalidInputError(f"eta must be a finite non-negative number, got {eta}")
    return weight, grad


class MuonPlusPlusOptimizer(AbstractSpectralOptimizer):
    """
    Muon++: momentum projected onto the orthogonal complement of the weight's top singular
    pair, then orthogonalized, so the step leaves sigma1 untouched whenever
    ``eta * S <= sigma1 - sigma2``.
    """

    def __init__(
        self,
        linalg: Optional[AbstractLinalgBackend] = None,
        msign_mode: Optional[str] = None,
        msign_steps: Optional[int] = None,
        nesterov: bool = False,
        projection_zero_rtol: Optional[float] = None,
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.msign_mode = msign_mode or settings.MSIGN_MODE
        self.msign_steps = msign_steps or settings.NEWTON_SCHULZ_STEPS
        self.nesterov = nesterov
        self.projection_zero_rtol = projection_zero_rtol or settings.PROJECTION_ZERO_RTOL
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def step(
        self, state: MuonPPState, weight: np.ndarray, grad: np.ndarray, eta: float
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        weight, grad = _validate_step_inputs(state, weight, grad, eta)
        new_state, direction = self._advance_momentum(state, grad)
        info = self.linalg.top_two_singular(weight)
        polar = self._projected_polar(direction, info)
        S = state.target.S

        new_weight = weight - eta * S * polar.matrix
        report = StepReport(
            delta=polar.matrix,
            new_weight=new_weight,
            spectral_norm_after=self.linalg.spectral_norm(new_weight),
            admissible_eta=admissible_eta_from(info),
            rescaled=False,
            gap_before=info.gap,
            step=new_state.step,
            eta=eta,
            S=S,
            delta_residual=polar.residual,
        )
        return new_weight, new_state, report

    def _advance_momentum(self, state: MuonPPState, grad: np.ndarray) -> Tuple[MuonPPState, np.ndarray]:
        momentum = state.mu * state.momentum + grad
        direction = state.mu * momentum + grad if self.nesterov else momentum
        new_state = MuonPPState(momentum=momentum, mu=state.mu, target=state.target, step=state.step + 1)
        return new_state, direction

    def _projected_polar(self, direction: np.ndarray, info: SingularInfo) -> PolarFactor:
        projected = self.linalg.project_out_top(direction, info.u1, info.v1)
        scale = np.linalg.norm(direction)
        if scale == 0.0 or np.linalg.norm(projected) <= self.projection_zero_rtol * scale:
            # momentum aligned with u1 v1^T: msign(0) = 0
            self.logger.debug("Projected momentum vanished; applying a zero update")
            return PolarFactor(matrix=np.zeros_like(direction), residual=0.0, mode=self.msign_mode)
        return self.linalg.polar_factor(projected, mode=self.msign_mode, steps=self.msign_steps)


class MuonPlusPlusRescaleOptimizer(MuonPlusPlusOptimizer):
    """Muon++ followed by direct spectral rescaling of the half step back to ``S``."""

    def __init__(self, *args, rescale_rtol: Optional[float] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.rescale_rtol = rescale_rtol or settings.RESCALE_RTOL

    def step(
        self, state: MuonPPState, weight: np.ndarray, grad: np.ndarray, eta: float
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        half, new_state, report = super().step(state, weight, grad, eta)
        S = state.target.S
        half_norm = report.spectral_norm_after
        if half_norm == 0.0:
            raise DegenerateInputError("half step collapsed to the zero matrix; cannot rescale")

        new_weight = S * half / half_norm
        report.rescaled = abs(half_norm - S) > self.rescale_rtol * S
        if report.rescaled:
            self.logger.debug(f"Rescaled half step from {half_norm:.12g} to S={S:.12g}")
        report.new_weight = new_weight
        report.spectral_norm_after = self.linalg.spectral_norm(new_weight)
        return new_weight, new_state, report


class MuonBaselineOptimizer(AbstractSpectralOptimizer):
    """Plain Muon: msign of the momentum, optionally scaled by 0.2 * sqrt(max(m, n))."""

    def __init__(
        self,
        linalg: Optional[AbstractLinalgBackend] = None,
        msign_mode: Optional[str] = None,
        msign_steps: Optional[int] = None,
        nesterov: bool = False,
        match_scaling: bool = False,
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.msign_mode = msign_mode or settings.MSIGN_MODE
        self.msign_steps = msign_steps or settings.NEWTON_SCHULZ_STEPS
        self.nesterov = nesterov
        self.match_scaling = match_scaling
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    @staticmethod
    def scale_multiplier(shape: Tuple[int, int], match_scaling: bool) -> float:
        return 0.2 * math.sqrt(max(shape)) if match_scaling else 1.0

    def step(
        self, state: MuonPPState, weight: np.ndarray, grad: np.ndarray, eta: float
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        weight, grad = _validate_step_inputs(state, weight, grad, eta)
        momentum = state.mu * state.momentum + grad
        direction = state.mu * momentum + grad if self.nesterov else momentum
        polar = self.linalg.polar_factor(direction, mode=self.msign_mode, steps=self.msign_steps)
        multiplier = self.scale_multiplier(weight.shape, self.match_scaling)
        new_weight = weight - eta * multiplier * polar.matrix
        new_state = MuonPPState(momentum=momentum, mu=state.mu, target=state.target, step=state.step + 1)
        report = StepReport(
            delta=polar.matrix,
            new_weight=new_weight,
            spectral_norm_after=self.linalg.spectral_norm(new_weight),
            admissible_eta=float("nan"),
            rescaled=False,
            gap_before=float("nan"),
            step=new_state.step,
            eta=eta,
            S=state.target.S,
            delta_residual=polar.residual,
        )
        return new_weight, new_state, report


class CascadeNormalizer(AbstractSpectralOptimizer):
    """
    Two-step spectral normalization: normalized gradient step, then the whole weight is
    renormalized to ``sigma_mult * sqrt(m / n)``. The renormalization silently changes
    the size of the applied update whenever the half step is off target.
    """

    def __init__(self, linalg: Optional[AbstractLinalgBackend] = None, sigma_mult: float = 1.0):
        self.linalg = linalg or DenseLinalgBackend()
        self.sigma_mult = sigma_mult
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def apply(self, weight, grad, eta: float, sigma_mult: Optional[float] = None) -> Tuple[np.ndarray, float]:
        weight = as_matrix(weight, "W")
        grad = as_matrix(grad, "G")
        require_same_shape(weight, grad, "W", "G")
        sigma_mult = self.sigma_mult if sigma_mult is None else sigma_mult
        if not sigma_mult > 0:
            raise InvalidInputError(f"sigma_mult must be positive, got {sigma_mult}")
        if not (math.isfinite(eta) and eta >= 0):
            raise InvalidInputError(f"eta must be a finite non-negative number, got {eta}")
        grad_norm = self.linalg.spectral_norm(grad)
        if grad_norm == 0.0:
            raise DegenerateInputError("cascade step needs a non-zero gradient")

        m, n = weight.shape
        S = math.sqrt(m / n)
        half = weight - eta * S * (grad / grad_norm)
        half_norm = self.linalg.spectral_norm(half)
        if half_norm == 0.0:
            raise DegenerateInputError("half step collapsed to the zero matrix; cannot renormalize")
        new_weight = sigma_mult * S * half / half_norm
        net_update = self.linalg.spectral_norm(new_weight - weight)
        self.logger.debug(f"cascade step: intended {eta * S:.6g}, net update {net_update:.6g}")
        return new_weight, net_update

    def step(
        self, state: MuonPPState, weight: np.ndarray, grad: np.ndarray, eta: float
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        weight, grad = _validate_step_inputs(state, weight, grad, eta)
        new_weight, net_update = self.apply(weight, grad, eta)
        new_state = MuonPPState(momentum=state.momentum, mu=state.mu, target=state.target, step=state.step + 1)
        report = StepReport(
            delta=new_weight - weight,
            new_weight=new_weight,
            spectral_norm_after=self.linalg.spectral_norm(new_weight),
            admissible_eta=float("nan"),
            rescaled=True,
            gap_before=float("nan"),
            step=new_state.step,
            eta=eta,
            S=state.target.S,
            delta_residual=net_update,
        )
        return new_weight, new_state, report


class DualSubgradientSolver:
    """
    Minimizes F(nu) = ||G + nu u1 v1^T||_* by subgradient descent with steps
    ``step_size / sqrt(k)``, using <u1 v1^T, msign(G + nu u1 v1^T)> as the subgradient.
    The best iterate seen is returned.
    """

    def __init__(
        self,
        linalg: Optional[AbstractLinalgBackend] = None,
        iterations: Optional[int] = None,
        msign_mode: str = "exact",
        degenerate_rtol: Optional[float] = None,
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.iterations = iterations or settings.DUAL_ITERATIONS
        self.msign_mode = msign_mode
        self.degenerate_rtol = degenerate_rtol or settings.DUAL_DEGENERATE_RTOL
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def solve(
        self, grad, u1, v1, step_size: Optional[float] = None, iterations: Optional[int] = None
    ) -> DualSolve:
        grad = as_matrix(grad, "G")
        u1 = as_unit_vector(u1, grad.shape[0], "u1")
        v1 = as_unit_vector(v1, grad.shape[1], "v1")
        iterations = iterations or self.iterations
        if step_size is None:
            step_size = self.linalg.spectral_norm(grad) or 1.0
        if not step_size > 0:
            raise InvalidInputError(f"step_size must be positive, got {step_size}")
        anchor = np.outer(u1, v1)

        nu = 0.0
        best_nu, best_value = nu, self.linalg.nuclear_norm(grad)
        subgradient = 0.0
        k = 0
        for k in range(1, iterations + 1):
            shifted = grad + nu * anchor
            value = self.linalg.nuclear_norm(shifted)
            if value < best_value:
                best_nu, best_value = nu, value
            delta = self.linalg.polar_factor(shifted, mode=self.msign_mode).matrix
            subgradient = float(u1 @ delta @ v1)
            if subgradient == 0.0:
                break
            nu -= step_size / math.sqrt(k) * subgradient
            self.logger.debug(f"dual iteration {k}: nu={nu:.6g} F={value:.10g} g={subgradient:.3e}")
        else:
            shifted = grad + nu * anchor
            value = self.linalg.nuclear_norm(shifted)
            if value < best_value:
                best_nu, best_value = nu, value

        shifted = grad + best_nu * anchor
        degenerate = np.linalg.norm(shifted) <= self.degenerate_rtol * max(np.linalg.norm(grad), 1.0)
        if degenerate:
            self.logger.warning(f"Dual minimizer nu={best_nu:.6g} cancels G; returning the zero update")
            delta = np.zeros_like(grad)
        else:
            delta = self.linalg.polar_factor(shifted, mode=self.msign_mode).matrix
        return DualSolve(
            nu_min=best_nu,
            objective=best_value,
            delta=delta,
            iterations=k,
            degenerate=bool(degenerate),
            residual=abs(float(u1 @ delta @ v1)),
        )


class TokenBudgetCalculator:
    """Steps (and tokens) after which a cumulative update of peak rate ``eta`` outgrows the init scale."""

    def threshold(
        self, eta_peak: float, n: int, initializer_range: float, base_width: int, batch_size: int
    ) -> BudgetThreshold:
        if not eta_peak > 0:
            raise InvalidInputError(f"eta_peak must be positive, got {eta_peak}")
        if n < 1 or base_width < 1 or batch_size < 1:
            raise InvalidInputError(
                f"n, base_width and batch_size must be positive, got n={n}, base_width={base_width}, "
                f"batch_size={batch_size}"
            )
        if not initializer_range >= 0:
            raise InvalidInputError(f"initializer_range must be non-negative, got {initializer_range}")
        steps = 2.0 * math.sqrt(n) * initializer_range / (eta_peak * base_width)
        return BudgetThreshold(T_threshold=steps, token_threshold=batch_size * steps)
