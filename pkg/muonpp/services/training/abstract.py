from abc import ABC, abstractmethod
from typing import List

import numpy as np

from muonpp.services.training.dto import Activations, MLPConfig, TrainRecord


class AbstractNetwork(ABC):
    @abstractmethod
    def init_weights(self, config: MLPConfig) -> List[np.ndarray]:
        pass

    @abstractmethod
    def forward(self, weights: List[np.ndarray], x: np.ndarray) -> Activations:
        pass

    @abstractmethod
    def backward(self, weights: List[np.ndarray], activations: Activations, target: np.ndarray) -> List[np.ndarray]:
        pass


class AbstractTrainer(ABC):
    @abstractmethod
    def train_run(self, config: MLPConfig, optimizer_kind: str, eta: float, **options) -> List[TrainRecord]:
        pass
