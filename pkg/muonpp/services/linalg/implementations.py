import logging
from typing import Optional, Tuple

import numpy as np
from scipy.sparse.linalg import svds

from muonpp.conf import settings
from muonpp.exceptions import DegenerateInputError, InvalidInputError
from muonpp.services.linalg.abstract import AbstractLinalgBackend
from muonpp.services.linalg.dto import PolarFactor, SingularInfo
from muonpp.services.linalg.exceptions import JacobiConvergenceError
from muonpp.services.linalg.matrix import as_matrix, as_unit_vector

EPS = np.finfo(np.float64).eps
MSIGN_MODES = ("exact", "iterative")
SINGULAR_METHODS = ("power", "lanczos")


def _start_vector(size: int) -> np.ndarray:
    # all-ones plus a fixed non-symmetric perturbation
    v = np.ones(size) + 1e-3 * np.cos(np.arange(1, size + 1))
    return v / np.linalg.norm(v)


def _fix_sign(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    nonzero = np.flatnonzero(np.abs(u) > EPS)
    if nonzero.size and u[nonzero[0]] < 0:
        return -u, -v
    return u, v


class DenseLinalgBackend(AbstractLinalgBackend):
    """
    Dense linear-algebra primitives on float64 numpy arrays.

    Power iteration runs on the Gram operator of the taller orientation of the matrix and
    deflates once for the second singular value. Exact msign and the nuclear norm go
    through LAPACK; the one-sided Jacobi decomposition is kept as an independent oracle.
    """

    def __init__(
        self,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
        check_every: Optional[int] = None,
        newton_schulz_steps: Optional[int] = None,
        jacobi_limit: Optional[int] = None,
        dense_norm_limit: Optional[int] = None,
    ):
        self.tol = tol or settings.POWER_ITERATION_TOL
        self.max_iter = max_iter or settings.POWER_ITERATION_MAX_ITER
        self.check_every = check_every or settings.POWER_ITERATION_CHECK_EVERY
        self.newton_schulz_steps = newton_schulz_steps or settings.NEWTON_SCHULZ_STEPS
        self.jacobi_limit = jacobi_limit or settings.EXACT_SVD_LIMIT
        self.dense_norm_limit = dense_norm_limit or settings.DENSE_NORM_LIMIT
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")

    # singular values

    def top_two_singular(
        self, matrix: np.ndarray, tol: Optional[float] = None, max_iter: Optional[int] = None, method: str = "power"
    ) -> SingularInfo:
        matrix = as_matrix(matrix)
        tol = tol or self.tol
        max_iter = max_iter or self.max_iter
        if tol <= 0:
            raise InvalidInputError(f"tol must be positive, got {tol}")
        if method not in SINGULAR_METHODS:
            raise InvalidInputError(f"unknown singular value method {method!r}, expected one of {SINGULAR_METHODS}")
        if not np.any(matrix):
            raise DegenerateInputError("top_two_singular needs a non-zero matrix")

        if method == "lanczos":
            return self._top_two_lanczos(matrix)

        # work with a tall matrix so the Gram operator is the smaller one
        transposed = matrix.shape[0] < matrix.shape[1]
        tall = matrix.T if transposed else matrix

        sigma1, u, v, iters1, res1, ok1 = self._power(tall, tol, max_iter)
        residual_matrix = tall - sigma1 * np.outer(u, v)
        if np.linalg.norm(residual_matrix) <= 64 * EPS * sigma1 * np.sqrt(tall.shape[1]):
            sigma2, iters2, ok2 = 0.0, 0, True
        else:
            sigma2, _, _, iters2, _, ok2 = self._power(residual_matrix, tol, max_iter)
            sigma2 = min(sigma2, sigma1)

        u1, v1 = (v, u) if transposed else (u, v)
        u1, v1 = _fix_sign(u1, v1)
        converged = ok1 and ok2
        if not converged:
            self.logger.warning(
                f"Power iteration did not reach tol={tol:g} within {max_iter} iterations "
                f"(shape={matrix.shape}, sigma1={sigma1:.6g}, sigma2={sigma2:.6g})"
            )
        return SingularInfo(
            sigma1=float(sigma1),
            sigma2=float(sigma2),
            u1=u1,
            v1=v1,
            converged=converged,
            iterations=iters1 + iters2,
            residual=float(res1),
        )

    def _power(self, tall: np.ndarray, tol: float, max_iter: int):
        """Power iteration on tall^T tall. Returns (sigma, u, v, iterations, residual, converged)."""
        gram = tall.T @ tall
        v = _start_vector(gram.shape[0])
        residual = np.inf
        converged = False
        iterations = 0
        for iterations in range(1, max_iter + 1):
            w = gram @ v
            norm_w = np.linalg.norm(w)
            if norm_w == 0.0:
                # start vector landed in the null space; restart on a coordinate axis
                v = np.zeros_like(v)
                v[iterations % v.size] = 1.0
                continue
            v = w / norm_w
            if iterations % self.check_every == 0 or iterations == max_iter:
                gv = gram @ v
                lam = float(v @ gv)
                if lam <= 0.0:
                    continue
                residual = np.linalg.norm(gv - lam * v) / lam
                self.logger.debug(f"power iteration {iterations}: residual={residual:.3e}")
                if residual <= tol:
                    converged = True
                    break
        tv = tall @ v
        sigma = float(np.linalg.norm(tv))
        u = tv / sigma if sigma > 0 else np.zeros(tall.shape[0])
        return sigma, u, v, iterations, float(residual), converged

    def _top_two_lanczos(self, matrix: np.ndarray) -> SingularInfo:
        if min(matrix.shape) <= max(self.dense_norm_limit, 2):
            u_full, s, vt = np.linalg.svd(matrix, full_matrices=False)
            u, v = u_full[:, 0], vt[0]
            sigma1 = float(s[0])
            sigma2 = float(s[1]) if s.size > 1 else 0.0
        else:
            v0 = _start_vector(min(matrix.shape))
            u_k, s, vt_k = svds(matrix, k=2, v0=v0)
            order = np.argsort(s)[::-1]
            sigma1, sigma2 = float(s[order[0]]), float(s[order[1]])
            u, v = u_k[:, order[0]], vt_k[order[0]]
        u, v = _fix_sign(u, v)
        return SingularInfo(sigma1=sigma1, sigma2=sigma2, u1=u, v1=v, converged=True)

    # matrix sign

    def polar_factor(self, matrix: np.ndarray, mode: str = "exact", steps: Optional[int] = None) -> PolarFactor:
        matrix = as_matrix(matrix)
        if mode not in MSIGN_MODES:
            raise InvalidInputError(f"unknown msign mode {mode!r}, expected one of {MSIGN_MODES}")
        if mode == "exact":
            result = self._msign_exact(matrix)
            return PolarFactor(matrix=result, residual=self._polar_residual(result), mode=mode)
        steps = steps or self.newton_schulz_steps
        if steps < 1:
            raise InvalidInputError(f"steps must be positive, got {steps}")
        result = self._msign_newton_schulz(matrix, steps)
        residual = self._polar_residual(result)
        return PolarFactor(matrix=result, residual=residual, mode=mode, steps=steps)

    @staticmethod
    def _msign_exact(matrix: np.ndarray) -> np.ndarray:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            return np.zeros_like(matrix)
        keep = s > max(matrix.shape) * EPS * s[0]
        return u[:, keep] @ vt[keep]

    @staticmethod
    def _msign_newton_schulz(matrix: np.ndarray, steps: int) -> np.ndarray:
        fro = np.linalg.norm(matrix)
        if fro == 0.0:
            return np.zeros_like(matrix)
        x = matrix / fro
        wide = x.shape[0] < x.shape[1]
        for _ in range(steps):
            if wide:
                x = 1.5 * x - 0.5 * (x @ x.T) @ x
            else:
                x = 1.5 * x - 0.5 * x @ (x.T @ x)
        return x

    @staticmethod
    def _polar_residual(x: np.ndarray) -> float:
        return float(np.linalg.norm(x @ (x.T @ x) - x))

    # projections and norms

    def project_out_top(self, matrix: np.ndarray, u1: np.ndarray, v1: np.ndarray) -> np.ndarray:
        matrix = as_matrix(matrix)
        u1 = as_unit_vector(u1, matrix.shape[0], "u1")
        v1 = as_unit_vector(v1, matrix.shape[1], "v1")
        out = matrix - np.outer(u1, u1 @ matrix)
        return out - np.outer(out @ v1, v1)

    def nuclear_norm(self, matrix: np.ndarray) -> float:
        matrix = as_matrix(matrix)
        return float(np.sum(np.linalg.svd(matrix, compute_uv=False)))

    def spectral_norm(self, matrix: np.ndarray) -> float:
        matrix = as_matrix(matrix)
        if not np.any(matrix):
            return 0.0
        if min(matrix.shape) <= self.dense_norm_limit:
            return float(np.linalg.norm(matrix, 2))
        v0 = _start_vector(min(matrix.shape))
        return float(svds(matrix, k=1, v0=v0, return_singular_vectors=False)[0])

    def jacobi_svd(self, matrix: np.ndarray, max_sweeps: int = 60) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One-sided (Hestenes) Jacobi SVD returning economy ``U, s, V^T`` with ``s`` descending."""
        matrix = as_matrix(matrix)
        if max(matrix.shape) > self.jacobi_limit:
            raise InvalidInputError(f"jacobi_svd supports up to {self.jacobi_limit} rows/cols, got {matrix.shape}")
        transposed = matrix.shape[0] < matrix.shape[1]
        a = (matrix.T if transposed else matrix).copy()
        cols = a.shape[1]
        v = np.eye(cols)
        tol = cols * EPS

        for sweep in range(1, max_sweeps + 1):
            off = 0.0
            for i in range(cols - 1):
                for j in range(i + 1, cols):
                    alpha = a[:, i] @ a[:, i]
                    beta = a[:, j] @ a[:, j]
                    gamma = a[:, i] @ a[:, j]
                    scale = np.sqrt(alpha * beta)
                    if scale == 0.0 or abs(gamma) <= tol * scale:
                        continue
                    off = max(off, abs(gamma) / scale)
                    zeta = (beta - alpha) / (2.0 * gamma)
                    t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                    c = 1.0 / np.sqrt(1.0 + t * t)
                    s = c * t
                    ai, aj = a[:, i].copy(), a[:, j].copy()
                    a[:, i], a[:, j] = c * ai - s * aj, s * ai + c * aj
                    vi, vj = v[:, i].copy(), v[:, j].copy()
                    v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
            if off <= tol:
                break
        else:
            raise JacobiConvergenceError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
        self.logger.debug(f"Jacobi SVD converged after {sweep} sweeps for shape {matrix.shape}")

        sing = np.linalg.norm(a, axis=0)
        order = np.argsort(sing)[::-1]
        sing = sing[order]
        a = a[:, order]
        v = v[:, order]
        u = np.zeros_like(a)
        positive = sing > 0
        u[:, positive] = a[:, positive] / sing[positive]
        if transposed:
            return v, sing, u.T
        return u, sing, v.T
