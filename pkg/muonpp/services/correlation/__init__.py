"""
Correlated Weight Model Package
"""

from muonpp.services.correlation.dto import (
    BoundaryRule,
    CorrelatedDraw,
    CorrelatedWeightSpec,
    Regime,
    SpectralPrediction,
)
from muonpp.services.correlation.service import CorrelationService

__version__ = "1.0.0"
__all__ = [
    "CorrelationService",
    "CorrelatedWeightSpec",
    "CorrelatedDraw",
    "SpectralPrediction",
    "Regime",
    "BoundaryRule",
]
