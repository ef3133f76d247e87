from dataclasses import dataclass
from typing import Any, Dict

import numpy as np


@dataclass
class SingularInfo:
    """Top-two singular values of a matrix with the leading singular pair.

    Attributes:
        sigma1 (float): Largest singular value.
        sigma2 (float): Second largest singular value (0 for rank-one input).
        u1 (np.ndarray): Unit left singular vector; its first non-zero coordinate is positive.
        v1 (np.ndarray): Unit right singular vector matching ``u1``.
        converged (bool): False when the relative residual stayed above tol after max_iter.
        iterations (int): Total power iterations spent on both values.
        residual (float): Final relative residual ``||M^T u1 - sigma1 v1|| / sigma1``.
    """
    sigma1: float
    sigma2: float
    u1: np.ndarray
    v1: np.ndarray
    converged: bool
    iterations: int = 0
    residual: float = 0.0

    @property
    def gap(self) -> float:
        return self.sigma1 - self.sigma2

    def is_degenerate(self, rtol: float) -> bool:
        return self.gap < rtol * self.sigma1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "gap": self.gap,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
        }


@dataclass
class PolarFactor:
    matrix: np.ndarray
    residual: float
    mode: str
    steps: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "steps": self.steps,
            "residual": self.residual,
        }
