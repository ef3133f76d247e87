import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from muonpp.exceptions import InvalidInputError

ACTIVATIONS = ("relu", "tanh", "identity")
LOSSES = ("squared_error",)
OPTIMIZER_KINDS = ("muonpp", "muonpp_rescale", "muon", "cascade")


@dataclass(frozen=True)
class MLPConfig:
    """
    Biasless multilayer perceptron and the run that trains it.

    Attributes:
        widths (tuple): ``[n0, n1, ..., nL]``; ``L >= 2`` and every width at least 2.
        activation (str): Hidden activation, one of relu / tanh / identity. The last layer is linear.
        loss (str): Only ``squared_error``.
        batch_size (int): Samples per step.
        steps (int): Optimizer steps.
        seed (int): Master seed for init, the reference network and batches.
    """
    widths: Tuple[int, ...]
    activation: str = "relu"
    loss: str = "squared_error"
    batch_size: int = 32
    steps: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 3:
            raise InvalidInputError(f"need at least two layers, got widths {list(self.widths)}")
        if any(w < 2 for w in self.widths):
            raise InvalidInputError(f"every width must be at least 2, got {list(self.widths)}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise InvalidInputError(f"unknown loss {self.loss!r}, expected one of {LOSSES}")
        if self.batch_size < 1 or self.steps < 1:
            raise InvalidInputError(f"batch_size and steps must be positive, got {self.batch_size}, {self.steps}")
        if self.seed < 0:
            raise InvalidInputError(f"seed must be non-negative, got {self.seed}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return [(n_out, n_in) for n_in, n_out in zip(self.widths, self.widths[1:])]

    def with_hidden_multiplier(self, multiplier: int) -> "MLPConfig":
        """Scale every hidden width; input and output widths stay fixed."""
        if multiplier < 1:
            raise InvalidInputError(f"width multiplier must be a positive integer, got {multiplier}")
        hidden = tuple(w * multiplier for w in self.widths[1:-1])
        return replace(self, widths=(self.widths[0],) + hidden + (self.widths[-1],))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "widths": list(self.widths),
            "activation": self.activation,
            "loss": self.loss,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "seed": self.seed,
        }


@dataclass
class Activations:
    """Forward pass of one batch; column ``b`` of every array belongs to sample ``b``."""
    hidden: List[np.ndarray]
    pre: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.hidden[-1]


@dataclass
class LayerRecord:
    spectral_norm_W: float
    update_spectral_norm: float
    h_l2: float
    delta_h_l2: float
    gap: float
    rescaled: bool
    width: int = 0
    target_S: float = float("nan")
    admissible_eta: float = float("nan")
    rho_hat: float = float("nan")


@dataclass
class TrainRecord:
    step: int
    loss: float
    per_layer: List[LayerRecord] = field(default_factory=list)
    diverged: bool = False

    def to_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for index, layer in enumerate(self.per_layer, start=1):
            rows.append(
                {
                    "step": self.step,
                    "layer": index,
                    "loss": self.loss,
                    "diverged": self.diverged,
                    "width": layer.width,
                    "spectral_norm_W": layer.spectral_norm_W,
                    "target_S": layer.target_S,
                    "update_spectral_norm": layer.update_spectral_norm,
                    "h_l2": layer.h_l2,
                    "delta_h_l2": layer.delta_h_l2,
                    "gap": layer.gap,
                    "admissible_eta": layer.admissible_eta,
                    "rescaled": layer.rescaled,
                    "rho_hat": layer.rho_hat,
                }
            )
        if not rows:
            rows.append({"step": self.step, "layer": 0, "loss": self.loss, "diverged": self.diverged})
        return rows


def records_frame(records: Sequence[TrainRecord]) -> pd.DataFrame:
    return pd.DataFrame([row for record in records for row in record.to_rows()])


@dataclass
class SweepResult:
    table: pd.DataFrame
    argmin: Dict[int, float]
    argmin_drift: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "argmin": {str(k): v for k, v in self.argmin.items()},
            "argmin_drift": self.argmin_drift,
        }


@dataclass
class CoordinateCheck:
    table: pd.DataFrame
    after_step: int
    spread: Optional[float] = None

    @property
    def within_factor_two(self) -> Optional[bool]:
        if self.spread is None or math.isnan(self.spread):
            return None
        return self.spread < 2.0
