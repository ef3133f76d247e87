"""
Runtime settings.

Values come from ``MUONPP_*`` environment variables (a ``.env`` file in the working
directory is honoured) and fall back to the defaults below.
"""

import os

from dotenv import load_dotenv

load_dotenv()


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(f"MUONPP_{name}", default))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(f"MUONPP_{name}", default))


def _env_str(name: str, default: str) -> str:
    return os.getenv(f"MUONPP_{name}", default)


class Settings:
    # linalg
    POWER_ITERATION_TOL = _env_float("POWER_ITERATION_TOL", 1e-10)
    POWER_ITERATION_MAX_ITER = _env_int("POWER_ITERATION_MAX_ITER", 5000)
    POWER_ITERATION_CHECK_EVERY = _env_int("POWER_ITERATION_CHECK_EVERY", 5)
    NEWTON_SCHULZ_STEPS = _env_int("NEWTON_SCHULZ_STEPS", 30)
    EXACT_SVD_LIMIT = _env_int("EXACT_SVD_LIMIT", 512)
    DENSE_NORM_LIMIT = _env_int("DENSE_NORM_LIMIT", 256)
    DEGENERATE_GAP_RTOL = _env_float("DEGENERATE_GAP_RTOL", 1e-8)

    # spectral update
    DEFAULT_MOMENTUM = _env_float("DEFAULT_MOMENTUM", 0.95)
    MSIGN_MODE = _env_str("MSIGN_MODE", "exact")
    RESCALE_RTOL = _env_float("RESCALE_RTOL", 1e-9)
    PROJECTION_ZERO_RTOL = _env_float("PROJECTION_ZERO_RTOL", 1e-8)
    DUAL_DEGENERATE_RTOL = _env_float("DUAL_DEGENERATE_RTOL", 1e-10)
    DUAL_ITERATIONS = _env_int("DUAL_ITERATIONS", 500)

    # correlation model
    SUB_CRITICAL_CUTOFF = _env_float("SUB_CRITICAL_CUTOFF", 0.1)
    SUPER_CRITICAL_CUTOFF = _env_float("SUPER_CRITICAL_CUTOFF", 10.0)
    NON_VANISHING_RHO = _env_float("NON_VANISHING_RHO", 0.1)

    # experiments
    MIN_TRIALS = _env_int("MIN_TRIALS", 10)
    MAX_NON_CONVERGENCE_RATE = _env_float("MAX_NON_CONVERGENCE_RATE", 0.01)
    EXPERIMENT_WORKERS = _env_int("EXPERIMENT_WORKERS", 1)

    # training
    TRAIN_MSIGN_MODE = _env_str("TRAIN_MSIGN_MODE", "iterative")
    DIVERGENCE_LOSS = _env_float("DIVERGENCE_LOSS", 1e6)


settings = Settings()
