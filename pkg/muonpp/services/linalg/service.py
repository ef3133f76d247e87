from typing import Optional, Tuple

import numpy as np

from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.dto import PolarFactor, SingularInfo
from muonpp.services.linalg.implementations import DenseLinalgBackend


class LinalgService:
    def __init__(self, implementation: Optional[AbstractLinalgBackend] = None):
        self.implementation = implementation or DenseLinalgBackend()

    def top_two_singular(
        self, matrix, tol: Optional[float] = None, max_iter: Optional[int] = None, method: str = "power"
    ) -> SingularInfo:
        return self.implementation.top_two_singular(matrix, tol=tol, max_iter=max_iter, method=method)

    def msign(self, matrix, mode: str = "exact", steps: Optional[int] = None) -> np.ndarray:
        return self.implementation.polar_factor(matrix, mode=mode, steps=steps).matrix

    def polar_factor(self, matrix, mode: str = "exact", steps: Optional[int] = None) -> PolarFactor:
        return self.implementation.polar_factor(matrix, mode=mode, steps=steps)

    def project_out_top(self, matrix, u1, v1) -> np.ndarray:
        return self.implementation.project_out_top(matrix, u1, v1)

    def nuclear_norm(self, matrix) -> float:
        return self.implementation.nuclear_norm(matrix)

    def spectral_norm(self, matrix) -> float:
        return self.implementation.spectral_norm(matrix)

    def jacobi_svd(self, matrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.implementation.jacobi_svd(matrix)
