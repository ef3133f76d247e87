"""
Random Matrix Experiment Package
"""

from muonpp.services.rmt.dto import ExperimentReport, Verdict
from muonpp.services.rmt.service import RmtLabService

__version__ = "1.0.0"
__all__ = ["RmtLabService", "ExperimentReport", "Verdict"]
