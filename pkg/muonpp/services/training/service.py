from typing import List, Optional, Sequence

import numpy as np

from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.implementations import DenseLinalgBackend
from muonpp.services.training.abstract import AbstractTrainer
from muonpp.services.training.dto import Activations, CoordinateCheck, MLPConfig, SweepResult, TrainRecord
from muonpp.services.training.implementations import BiaslessMLP, SpectralTrainer


class TrainingService:
    def __init__(
        self, implementation: Optional[AbstractTrainer] = None, linalg: Optional[AbstractLinalgBackend] = None
    ):
        self.linalg = linalg or DenseLinalgBackend()
        self.implementation = implementation or SpectralTrainer(self.linalg)

    def network(self, config: MLPConfig) -> BiaslessMLP:
        return BiaslessMLP(config.activation, self.linalg)

    def mup_init(self, config: MLPConfig) -> List[np.ndarray]:
        return self.network(config).init_weights(config)

    def forward(self, config: MLPConfig, weights: List[np.ndarray], x) -> Activations:
        return self.network(config).forward(weights, x)

    def backward(
        self, config: MLPConfig, weights: List[np.ndarray], activations: Activations, target
    ) -> List[np.ndarray]:
        return self.network(config).backward(weights, activations, target)

    def gradient_check(self, config: MLPConfig, seed: int, step: float = 1e-5, floor: float = 1e-8) -> float:
        return self.network(config).gradient_check(config, seed, step=step, floor=floor)

    def train_run(self, config: MLPConfig, optimizer_kind: str, eta: float, **options) -> List[TrainRecord]:
        return self.implementation.train_run(config, optimizer_kind, eta, **options)

    def coordinate_check(
        self, base_config: MLPConfig, width_multipliers: Sequence[int], optimizer_kind: str, eta: float, **options
    ) -> CoordinateCheck:
        return self.implementation.coordinate_check(base_config, width_multipliers, optimizer_kind, eta, **options)

    def lr_sweep(
        self,
        base_config: MLPConfig,
        width_multipliers: Sequence[int],
        eta_grid: Sequence[float],
        optimizer_kind: str,
        **options,
    ) -> SweepResult:
        return self.implementation.lr_sweep(base_config, width_multipliers, eta_grid, optimizer_kind, **options)
