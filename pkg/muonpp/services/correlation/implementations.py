import logging
import math
from typing import Iterable, Optional, Tuple

import numpy as np

from muonpp.conf import settings
from muonpp.exceptions import DegenerateInputError, InvalidInputError
from muonpp.services.correlation.abstract import AbstractCorrelationModel
from muonpp.services.correlation.dto import (
    BoundaryRule,
    CorrelatedDraw,
    CorrelatedWeightSpec,
    FrobeniusPrediction,
    Regime,
    RhoExponentFit,
    SpectralPrediction,
    TriggerOutcome,
)
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.linalg.matrix import as_matrix

logger = logging.getLogger(__name__)


def classify_regime(
    spec: CorrelatedWeightSpec,
    sub_cutoff: Optional[float] = None,
    super_cutoff: Optional[float] = None,
    non_vanishing_rho: Optional[float] = None,
) -> Regime:
    """Finite-n regime of ``spec`` from ``n * rho`` and the absolute size of ``rho``."""
    sub_cutoff = sub_cutoff or settings.SUB_CRITICAL_CUTOFF
    super_cutoff = super_cutoff or settings.SUPER_CRITICAL_CUTOFF
    non_vanishing_rho = non_vanishing_rho or settings.NON_VANISHING_RHO
    if spec.rho_n >= non_vanishing_rho:
        return Regime.NON_VANISHING
    tau = spec.n * spec.rho_n
    if tau < sub_cutoff:
        return Regime.SUB_CRITICAL
    if tau > super_cutoff:
        return Regime.SUPER_CRITICAL
    return Regime.BOUNDARY


def conditional_rho(rho: float, z: float) -> float:
    """Value the moment estimator concentrates on for a draw with shared factor ``z``."""
    numerator = rho * z * z
    denominator = numerator + 1.0 - rho
    if denominator == 0.0:
        raise DegenerateInputError(f"rho={rho}, z={z} gives an all-zero draw")
    return numerator / denominator


def covariance_eigenvalues(spec: CorrelatedWeightSpec) -> Tuple[float, float]:
    """The two distinct eigenvalues of the entry covariance (bulk, then the all-ones direction)."""
    variance = spec.sigma_n ** 2
    return variance * (1.0 - spec.rho_n), variance * ((1.0 - spec.rho_n) + spec.rho_n * spec.size)


def boundary_factor(z: float, tau: float, c: float, rule: BoundaryRule) -> float:
    if rule == BoundaryRule.PROPOSITION:
        below = z * z * tau * math.sqrt(c) <= 1.0
    else:
        below = abs(z) * c ** 0.25 * tau <= 1.0
    if below:
        return 1.0
    z2tau = z * z * tau
    return math.sqrt((z2tau + 1.0) * (z2tau * c + 1.0)) / (abs(z) * (1.0 + math.sqrt(c)) * math.sqrt(tau))


def fit_rho_exponent(samples: Iterable[Tuple[int, float]]) -> RhoExponentFit:
    """Least-squares line through ``(log n, log rho_hat)``."""
    samples = list(samples)
    if len(samples) < 2:
        raise InvalidInputError(f"need at least 2 (n, rho_hat) samples, got {len(samples)}")
    ns = np.array([n for n, _ in samples], dtype=np.float64)
    rhos = np.array([rho for _, rho in samples], dtype=np.float64)
    if np.any(ns <= 0):
        raise InvalidInputError("every n must be positive")
    if np.any(~np.isfinite(rhos)) or np.any(rhos <= 0):
        raise InvalidInputError("every rho_hat must be positive to take its logarithm")
    if np.unique(ns).size < 2:
        raise InvalidInputError("need at least two distinct widths to fit an exponent")
    log_n, log_rho = np.log(ns), np.log(rhos)
    slope, intercept = np.polyfit(log_n, log_rho, 1)
    residual = float(np.sqrt(np.mean((log_rho - (slope * log_n + intercept)) ** 2)))
    return RhoExponentFit(slope=float(slope), intercept=float(intercept), residual=residual)


def rescale_on_trigger(weight, rho_prev: float, rho_cur: float, C: float, already_fired: bool) -> TriggerOutcome:
    """
    One-shot rescaling: the first time ``rho_cur`` exceeds ``C * (n^-1/2 + m^-1/2)`` the weight is
    multiplied by ``sqrt(rho_prev / rho_cur)``.
    """
    weight = as_matrix(weight, "W")
    if not (math.isfinite(C) and C > 0):
        raise InvalidInputError(f"trigger constant C must be positive, got {C}")
    m, n = weight.shape
    threshold = C * (n ** -0.5 + m ** -0.5)
    if already_fired or not rho_cur > threshold:
        return TriggerOutcome(weight=weight, fired=already_fired, threshold=threshold)
    if not (rho_prev > 0 and rho_cur > 0):
        raise InvalidInputError(
            f"rescaling needs positive rho estimates, got rho_prev={rho_prev}, rho_cur={rho_cur}"
        )
    factor = math.sqrt(rho_prev / rho_cur)
    logger.info(f"Correlation trigger fired: rho={rho_cur:.6g} > {threshold:.6g}, scaling weight by {factor:.6g}")
    return TriggerOutcome(weight=weight * factor, fired=True, factor=factor, threshold=threshold)


class ExchangeableCorrelationModel(AbstractCorrelationModel):
    """
    Sampler, moment estimator and closed-form norm predictions for the exchangeable model
    ``W = sigma (sqrt(rho) Z J + sqrt(1 - rho) Phi)``.
    """

    def __init__(self, linalg: Optional[AbstractLinalgBackend] = None):
        self.linalg = linalg or DenseLinalgBackend()
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    def sample(self, spec: CorrelatedWeightSpec, seed: int) -> CorrelatedDraw:
        z, phi = self._draw(spec, seed)
        sigma, rho = spec.sigma_n, spec.rho_n
        if rho >= 0:
            weight = sigma * (math.sqrt(rho) * z + math.sqrt(1.0 - rho) * phi)
            return CorrelatedDraw(weight=weight, z=z, seed=seed)

        # negative correlation: shrink the all-ones component of Phi instead of adding a shared factor
        bulk, top = covariance_eigenvalues(CorrelatedWeightSpec(spec.m, spec.n, 1.0, rho))
        mean = phi.mean()
        weight = sigma * (math.sqrt(bulk) * (phi - mean) + math.sqrt(max(top, 0.0)) * mean)
        return CorrelatedDraw(weight=weight, z=float("nan"), seed=seed)

    def reconstruct_noise(self, draw: CorrelatedDraw, spec: CorrelatedWeightSpec) -> np.ndarray:
        _, phi = self._draw(spec, draw.seed)
        return phi

    @staticmethod
    def _draw(spec: CorrelatedWeightSpec, seed: int) -> Tuple[float, np.ndarray]:
        rng = np.random.default_rng(seed)
        z = float(rng.standard_normal())
        phi = rng.standard_normal((spec.m, spec.n))
        return z, phi

    def mom_rho(self, weight) -> float:
        weight = as_matrix(weight, "W")
        size = weight.size
        if size < 2:
            raise InvalidInputError("the moment estimator needs at least two entries")
        flat = weight.ravel()
        mean = flat.sum() / size
        second = float(flat @ flat) / size
        if second == 0.0:
            raise DegenerateInputError("the moment estimator is undefined for an all-zero matrix")
        return float((size * mean * mean - second) / ((size - 1) * second))

    def predict_frobenius(self, spec: CorrelatedWeightSpec) -> FrobeniusPrediction:
        warning = spec.rho_n >= settings.NON_VANISHING_RHO
        if warning:
            self.logger.warning(f"Frobenius prediction used outside the small-rho regime (rho={spec.rho_n:.6g})")
        return FrobeniusPrediction(predicted_norm=spec.sigma_n * math.sqrt(spec.size), warning=warning)

    def predict_spectral(
        self, spec: CorrelatedWeightSpec, z: float, boundary_rule: str = BoundaryRule.PROPOSITION.value
    ) -> SpectralPrediction:
        rule = BoundaryRule(boundary_rule)
        regime = classify_regime(spec)
        bai_yin_edge = spec.sigma_n * (math.sqrt(spec.m) + math.sqrt(spec.n))
        tau = spec.n * spec.rho_n

        if regime == Regime.SUB_CRITICAL:
            return SpectralPrediction(regime=regime, predicted_norm=bai_yin_edge, boundary_rule=rule)
        if regime == Regime.BOUNDARY:
            if not math.isfinite(z) or z == 0.0:
                return SpectralPrediction(regime=regime, predicted_norm=bai_yin_edge, tau=tau, boundary_rule=rule)
            factor = boundary_factor(z, tau, spec.c, rule)
            return SpectralPrediction(regime=regime, predicted_norm=bai_yin_edge * factor, tau=tau, boundary_rule=rule)
        # super-critical and non-vanishing: the rank-one shared component dominates
        spike = spec.sigma_n * math.sqrt(spec.size * spec.rho_n) * abs(z)
        return SpectralPrediction(regime=regime, predicted_norm=spike, tau=tau, boundary_rule=rule)

    def stable_rank(self, weight) -> float:
        weight = as_matrix(weight, "W")
        spectral = self.linalg.spectral_norm(weight)
        if spectral == 0.0:
            raise DegenerateInputError("stable rank is undefined for the zero matrix")
        return float(np.sum(weight * weight)) / (spectral * spectral)
