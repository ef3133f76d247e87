"""
MLP Training Harness Package
"""

from muonpp.services.training.dto import MLPConfig, SweepResult, TrainRecord, records_frame
from muonpp.services.training.exceptions import TrainingDivergedError
from muonpp.services.training.service import TrainingService

__version__ = "1.0.0"
__all__ = [
    "TrainingService",
    "MLPConfig",
    "TrainRecord",
    "SweepResult",
    "TrainingDivergedError",
    "records_frame",
]
