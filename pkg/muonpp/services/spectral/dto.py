import math
from dataclasses import dataclass, replace
from typing import Any, Dict, Tuple

import numpy as np

from muonpp.exceptions import InvalidInputError


@dataclass(frozen=True)
class SpectralTarget:
    """
    Per-layer spectral target ``S = sqrt(n_out / n_in)``.

    ``scale`` stays 1.0 for the time-independent target; the correlation trigger is the
    only caller that moves it.
    """
    n_out: int
    n_in: int
    scale: float = 1.0

    def __post_init__(self):
        if self.n_out < 1 or self.n_in < 1:
            raise InvalidInputError(f"target dimensions must be positive, got {self.n_out}x{self.n_in}")
        if not self.scale > 0:
            raise InvalidInputError(f"target scale must be positive, got {self.scale}")

    @property
    def S(self) -> float:
        return math.sqrt(self.n_out / self.n_in) * self.scale

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_out, self.n_in

    def scaled(self, factor: float) -> "SpectralTarget":
        return replace(self, scale=self.scale * factor)

    def to_dict(self) -> Dict[str, Any]:
        return {"n_out": self.n_out, "n_in": self.n_in, "S": self.S}


@dataclass
class MuonPPState:
    momentum: np.ndarray
    mu: float
    target: SpectralTarget
    step: int = 0

    @classmethod
    def zeros(cls, target: SpectralTarget, mu: float) -> "MuonPPState":
        if not 0.0 <= mu < 1.0:
            raise InvalidInputError(f"momentum coefficient mu must lie in [0, 1), got {mu}")
        return cls(momentum=np.zeros(target.shape), mu=mu, target=target, step=0)


@dataclass
class StepReport:
    """
    Telemetry for one optimizer step.

    Attributes:
        delta (np.ndarray): The applied direction.
        new_weight (np.ndarray): Weight after the step.
        spectral_norm_after (float): ||new_weight||.
        admissible_eta (float): (sigma1 - sigma2) / sigma1 of the weight before the step.
        rescaled (bool): Direct rescaling moved the half step by more than the tolerance.
        gap_before (float): sigma1 - sigma2 of the weight before the step.
        step (int): Step counter after the update.
        eta (float): Step size used.
        S (float): Spectral target used.
        delta_residual (float): Polar-factor residual of ``delta``.
    """
    delta: np.ndarray
    new_weight: np.ndarray
    spectral_norm_after: float
    admissible_eta: float
    rescaled: bool
    gap_before: float
    step: int = 0
    eta: float = 0.0
    S: float = 1.0
    delta_residual: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "eta": self.eta,
            "S": self.S,
            "gap_before": self.gap_before,
            "admissible_eta": self.admissible_eta,
            "spectral_norm_after": self.spectral_norm_after,
            "rescaled": self.rescaled,
            "delta_residual": self.delta_residual,
        }


@dataclass
class DualSolve:
    nu_min: float
    objective: float
    delta: np.ndarray
    iterations: int
    degenerate: bool = False
    residual: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nu_min": self.nu_min,
            "objective": self.objective,
            "iterations": self.iterations,
            "degenerate": self.degenerate,
            "residual": self.residual,
        }


@dataclass
class BudgetThreshold:
    T_threshold: float
    token_threshold: float

    def to_dict(self) -> Dict[str, Any]:
        return {"T_threshold": self.T_threshold, "token_threshold": self.token_threshold}
