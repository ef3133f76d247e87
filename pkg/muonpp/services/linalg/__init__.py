"""
Dense Linear Algebra Service Package
"""

from muonpp.services.linalg.dto import PolarFactor, SingularInfo
from muonpp.services.linalg.matrix import as_matrix, frobenius_inner, read_mat1, write_mat1
from muonpp.services.linalg.service import LinalgService

__version__ = "1.0.0"
__all__ = [
    "LinalgService",
    "SingularInfo",
    "PolarFactor",
    "as_matrix",
    "frobenius_inner",
    "read_mat1",
    "write_mat1",
]
