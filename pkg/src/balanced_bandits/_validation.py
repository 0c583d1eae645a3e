"""Input validation helpers shared by estimators and policies."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ParameterError, ShapeError


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_non_negative(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ParameterError(f"{name} must be non-negative, got {value!r}")
    return float(value)


def check_gamma(gamma, allow_one: bool = False) -> float:
    """Clipping thresholds live in (0, 1); ``allow_one`` admits the no-op value 1."""
    upper_ok = gamma <= 1 if allow_one else gamma < 1
    if not isinstance(gamma, numbers.Real) or not (0 < gamma and upper_ok):
        raise ParameterError(f"gamma must lie in (0, 1), got {gamma!r}")
    return float(gamma)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ParameterError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_matrix(X, name: str = "X", n_features: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and X.size == 0 and n_features is not None:
        X = X.reshape(0, n_features)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} columns, expected {n_features}")
    return X


def check_vector(x, name: str = "x", size: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise ShapeError(f"{name} has length {x.shape[0]}, expected {size}")
    return x


def check_xy(X, y, sample_weight=None):
    """Validate a design matrix with matching response and optional weights."""
    X = check_matrix(X)
    y = check_vector(y, "y")
    if y.shape[0] != X.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if sample_weight is None:
        w = np.ones(X.shape[0])
    else:
        w = check_vector(sample_weight, "sample_weight", X.shape[0])
        if np.any(w <= 0):
            raise ParameterError("sample weights must be positive")
    return X, y, w


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
