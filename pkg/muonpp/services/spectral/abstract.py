from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from muonpp.services.spectral.dto import MuonPPState, StepReport


class AbstractSpectralOptimizer(ABC):
    """One optimizer step on a single matrix parameter."""

    @abstractmethod
    def step(
        self, state: MuonPPState, weight: np.ndarray, grad: np.ndarray, eta: float
    ) -> Tuple[np.ndarray, MuonPPState, StepReport]:
        pass
