"""
Matrix validation and the MAT1 text fixture format.

MAT1: line 1 is ``rows cols``, followed by ``rows`` lines of ``cols`` decimal values
written with 17 significant digits.
"""

from pathlib import Path

import numpy as np

from muonpp.exceptions import InvalidInputError
from muonpp.fileio import atomic_write_text
from muonpp.services.linalg.exceptions import MatrixFormatError

UNIT_ATOL = 1e-10


def as_matrix(value, name: str = "M") -> np.ndarray:
    matrix = np.asarray(value, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got {matrix.ndim}-D")
    if matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise InvalidInputError(f"{name} must have positive rows and cols, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return matrix


def as_unit_vector(value, length: int, name: str) -> np.ndarray:
    vector = np.asarray(value, dtype=np.float64).reshape(-1)
    if vector.size != length:
        raise InvalidInputError(f"{name} has length {vector.size}, expected {length}")
    if not np.all(np.isfinite(vector)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if abs(np.linalg.norm(vector) - 1.0) > UNIT_ATOL:
        raise InvalidInputError(f"{name} is not a unit vector (norm {np.linalg.norm(vector)!r})")
    return vector


def require_same_shape(a: np.ndarray, b: np.ndarray, a_name: str, b_name: str) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a_name} is {a.shape}, {b_name} is {b.shape}")


def format_mat1(matrix: np.ndarray) -> str:
    rows, cols = matrix.shape
    lines = [f"{rows} {cols}"]
    lines.extend(" ".join(format(float(x), ".17g") for x in row) for row in matrix)
    return "\n".join(lines) + "\n"


def parse_mat1(text: str, source: str = "<string>") -> np.ndarray:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise MatrixFormatError(f"{source}: empty MAT1 input")
    header = lines[0].split()
    try:
        rows, cols = int(header[0]), int(header[1])
    except (IndexError, ValueError):
        raise MatrixFormatError(f"{source}: bad MAT1 header {lines[0]!r}")
    if len(header) != 2 or rows < 1 or cols < 1:
        raise MatrixFormatError(f"{source}: bad MAT1 header {lines[0]!r}")
    body = lines[1:]
    if len(body) != rows:
        raise MatrixFormatError(f"{source}: expected {rows} rows, found {len(body)}")
    data = []
    for index, line in enumerate(body, start=2):
        fields = line.split()
        if len(fields) != cols:
            raise MatrixFormatError(f"{source}:{index}: expected {cols} values, found {len(fields)}")
        try:
            data.append([float(x) for x in fields])
        except ValueError as e:
            raise MatrixFormatError(f"{source}:{index}: {e}")
    return as_matrix(data, name=source)


def read_mat1(path) -> np.ndarray:
    path = Path(path)
    return parse_mat1(path.read_text(encoding="utf-8"), source=str(path))


def write_mat1(path, matrix) -> Path:
    return atomic_write_text(path, format_mat1(as_matrix(matrix)))


def frobenius_inner(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sum(a * b))
