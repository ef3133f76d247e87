import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from muonpp.exceptions import InvalidInputError


class Regime(str, Enum):
    SUB_CRITICAL = "sub_critical"
    SUPER_CRITICAL = "super_critical"
    BOUNDARY = "boundary"
    NON_VANISHING = "non_vanishing"


class BoundaryRule(str, Enum):
    PROPOSITION = "proposition"  # Z^2 tau sqrt(c) <= 1
    PROOF = "proof"  # |Z| c^(1/4) tau <= 1


@dataclass(frozen=True)
class CorrelatedWeightSpec:
    """
    Exchangeable Gaussian weight model: every entry has standard deviation ``sigma_n`` and
    every pair of entries has correlation ``rho_n``.

    Attributes:
        m (int): Rows, ``m <= n``.
        n (int): Columns.
        sigma_n (float): Entry standard deviation.
        rho_n (float): Pairwise correlation in ``[-1 / (mn - 1), 1]``.
    """
    m: int
    n: int
    sigma_n: float
    rho_n: float

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.m * self.n < 2:
            raise InvalidInputError(f"need at least two entries, got {self.m}x{self.n}")
        if self.m > self.n:
            raise InvalidInputError(f"aspect ratio m/n must lie in (0, 1], got m={self.m}, n={self.n}")
        if not (math.isfinite(self.sigma_n) and self.sigma_n >= 0):
            raise InvalidInputError(f"sigma_n must be a finite non-negative number, got {self.sigma_n}")
        if not (math.isfinite(self.rho_n) and self.rho_lower_bound <= self.rho_n <= 1.0):
            raise InvalidInputError(
                f"rho must lie in [{self.rho_lower_bound:.6g}, 1] for a {self.m}x{self.n} matrix, got {self.rho_n}"
            )

    @property
    def c(self) -> float:
        return self.m / self.n

    @property
    def size(self) -> int:
        return self.m * self.n

    @property
    def rho_lower_bound(self) -> float:
        return -1.0 / (self.m * self.n - 1)

    def to_dict(self) -> Dict[str, Any]:
        return {"m": self.m, "n": self.n, "sigma": self.sigma_n, "rho": self.rho_n, "c": self.c}


@dataclass
class CorrelatedDraw:
    """One sample of the model. ``z`` is NaN for negatively correlated draws, which have no shared factor."""
    weight: np.ndarray
    z: float
    seed: int


@dataclass
class SpectralPrediction:
    regime: Regime
    predicted_norm: float
    tau: Optional[float] = None
    boundary_rule: BoundaryRule = BoundaryRule.PROPOSITION

    def to_dict(self) -> Dict[str, Any]:
        return {
            "regime": self.regime.value,
            "predicted_norm": self.predicted_norm,
            "tau": self.tau,
            "boundary_rule": self.boundary_rule.value,
        }


@dataclass
class FrobeniusPrediction:
    predicted_norm: float
    warning: bool = False


@dataclass
class RhoExponentFit:
    slope: float
    intercept: float
    residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {"slope": self.slope, "intercept": self.intercept, "residual": self.residual}


@dataclass
class TriggerOutcome:
    weight: np.ndarray
    fired: bool
    factor: float = 1.0
    threshold: float = 0.0
