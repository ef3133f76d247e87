"""
Muon++ Optimizer Family Package
"""

from muonpp.services.spectral.dto import BudgetThreshold, DualSolve, MuonPPState, SpectralTarget, StepReport
from muonpp.services.spectral.service import SpectralUpdateService, init_state, spectral_target

__version__ = "1.0.0"
__all__ = [
    "SpectralUpdateService",
    "SpectralTarget",
    "MuonPPState",
    "StepReport",
    "DualSolve",
    "BudgetThreshold",
    "init_state",
    "spectral_target",
]
