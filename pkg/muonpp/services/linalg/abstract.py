from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

from muonpp.services.linalg.dto import PolarFactor, SingularInfo


class AbstractLinalgBackend(ABC):
    @abstractmethod
    def top_two_singular(
        self, matrix: np.ndarray, tol: Optional[float] = None, max_iter: Optional[int] = None, method: str = "power"
    ) -> SingularInfo:
        """Top-two singular values and the leading singular pair."""
        pass

    @abstractmethod
    def polar_factor(self, matrix: np.ndarray, mode: str = "exact", steps: Optional[int] = None) -> PolarFactor:
        """msign(M) = U V^T with its residual."""
        pass

    @abstractmethod
    def project_out_top(self, matrix: np.ndarray, u1: np.ndarray, v1: np.ndarray) -> np.ndarray:
        """(I - u1 u1^T) M (I - v1 v1^T)."""
        pass

    @abstractmethod
    def nuclear_norm(self, matrix: np.ndarray) -> float:
        pass

    @abstractmethod
    def spectral_norm(self, matrix: np.ndarray) -> float:
        pass

    @abstractmethod
    def jacobi_svd(self, matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        pass
