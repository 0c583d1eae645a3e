"""Symmetric positive-definite solves and Gaussian draws with diagonal jitter."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .exceptions import NumericalError

JITTER_RELATIVE = 1e-10
JITTER_ATTEMPTS = 3
JITTER_GROWTH = 10.0


def _base_jitter(A: np.ndarray) -> float:
    d = A.shape[0]
    tr = float(np.trace(A))
    return JITTER_RELATIVE * (tr / d if tr > 0 else 1.0)


def cholesky_jittered(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD matrix.

    On failure a diagonal jitter of ``1e-10 * trace(A) / d`` is added and
    grown tenfold for up to three attempts before giving up.
    """
    A = np.asarray(A, dtype=float)
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    jitter = _base_jitter(A)
    eye = np.eye(A.shape[0])
    for _ in range(JITTER_ATTEMPTS):
        try:
            return linalg.cholesky(A + jitter * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            jitter *= JITTER_GROWTH
    raise NumericalError("Cholesky factorization failed after jitter escalation")


def spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    L = cholesky_jittered(A)
    return linalg.cho_solve((L, True), b, check_finite=False)


def spd_inverse(A: np.ndarray) -> np.ndarray:
    inv = spd_solve(A, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def draw_multivariate_normal(mean, covariance, rng: np.random.Generator, scale: float = 1.0):
    """Return ``mean + scale * L @ z`` with ``L L^T = covariance`` and z standard normal.

    The standard normals are always consumed, even for a zero covariance, so
    that random streams stay aligned across policies sharing a seed.
    """
    mean = np.asarray(mean, dtype=float)
    covariance = np.asarray(covariance, dtype=float)
    z = rng.standard_normal(mean.shape[0])
    if not np.any(covariance):
        return mean.copy()
    L = cholesky_jittered(covariance)
    return mean + scale * (L @ z)
