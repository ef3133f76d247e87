from typing import Iterable, Optional, Tuple

import numpy as np

from muonpp.services.correlation.abstract import AbstractCorrelationModel
from muonpp.services.correlation.dto import (
    CorrelatedDraw,
    CorrelatedWeightSpec,
    FrobeniusPrediction,
    Regime,
    RhoExponentFit,
    SpectralPrediction,
    TriggerOutcome,
)
from muonpp.services.correlation.implementations import (
    ExchangeableCorrelationModel,
    classify_regime,
    conditional_rho,
    covariance_eigenvalues,
    fit_rho_exponent,
    rescale_on_trigger,
)


class CorrelationService:
    def __init__(self, implementation: Optional[AbstractCorrelationModel] = None):
        self.implementation = implementation or ExchangeableCorrelationModel()

    def sample_correlated(self, spec: CorrelatedWeightSpec, seed: int) -> CorrelatedDraw:
        return self.implementation.sample(spec, seed)

    def reconstruct_noise(self, draw: CorrelatedDraw, spec: CorrelatedWeightSpec) -> np.ndarray:
        return self.implementation.reconstruct_noise(draw, spec)

    def mom_rho(self, weight) -> float:
        return self.implementation.mom_rho(weight)

    def predict_frobenius(self, spec: CorrelatedWeightSpec) -> float:
        return self.implementation.predict_frobenius(spec).predicted_norm

    def frobenius_prediction(self, spec: CorrelatedWeightSpec) -> FrobeniusPrediction:
        return self.implementation.predict_frobenius(spec)

    def predict_spectral(
        self, spec: CorrelatedWeightSpec, z: float, boundary_rule: str = "proposition"
    ) -> SpectralPrediction:
        return self.implementation.predict_spectral(spec, z, boundary_rule=boundary_rule)

    def stable_rank(self, weight) -> float:
        return self.implementation.stable_rank(weight)

    def classify_regime(self, spec: CorrelatedWeightSpec) -> Regime:
        return classify_regime(spec)

    def conditional_rho(self, rho: float, z: float) -> float:
        return conditional_rho(rho, z)

    def covariance_eigenvalues(self, spec: CorrelatedWeightSpec) -> Tuple[float, float]:
        return covariance_eigenvalues(spec)

    def fit_rho_exponent(self, samples: Iterable[Tuple[int, float]]) -> RhoExponentFit:
        return fit_rho_exponent(samples)

    def rescale_on_trigger(
        self, weight, rho_prev: float, rho_cur: float, C: float, already_fired: bool
    ) -> Tuple[np.ndarray, bool]:
        outcome = rescale_on_trigger(weight, rho_prev, rho_cur, C, already_fired)
        return outcome.weight, outcome.fired

    def evaluate_trigger(
        self, weight, rho_prev: float, rho_cur: float, C: float, already_fired: bool
    ) -> TriggerOutcome:
        return rescale_on_trigger(weight, rho_prev, rho_cur, C, already_fired)
