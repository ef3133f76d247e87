from abc import ABC, abstractmethod

import numpy as np

from muonpp.services.correlation.dto import (
    CorrelatedDraw,
    CorrelatedWeightSpec,
    FrobeniusPrediction,
    SpectralPrediction,
)


class AbstractCorrelationModel(ABC):
    @abstractmethod
    def sample(self, spec: CorrelatedWeightSpec, seed: int) -> CorrelatedDraw:
        pass

    @abstractmethod
    def reconstruct_noise(self, draw: CorrelatedDraw, spec: CorrelatedWeightSpec) -> np.ndarray:
        pass

    @abstractmethod
    def mom_rho(self, weight: np.ndarray) -> float:
        pass

    @abstractmethod
    def predict_frobenius(self, spec: CorrelatedWeightSpec) -> FrobeniusPrediction:
        pass

    @abstractmethod
    def predict_spectral(self, spec: CorrelatedWeightSpec, z: float, boundary_rule: str) -> SpectralPrediction:
        pass

    @abstractmethod
    def stable_rank(self, weight: np.ndarray) -> float:
        pass
