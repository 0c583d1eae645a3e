"""Closed-form weighted ridge regression with a residual-scaled coefficient covariance."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import check_matrix, check_positive, check_vector, check_xy
from .exceptions import ParameterError, ShapeError
from .linalg import cholesky_jittered

# Covariance scale used before any reward has been observed.
EMPTY_HISTORY_SCALE = 1.0


@dataclass(frozen=True)
class ArmHistory:
    """Contexts, rewards and balancing weights observed for a single arm."""

    contexts: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    arm_id: int = 0

    def __post_init__(self):
        X = np.asarray(self.contexts, dtype=float)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, 0)
        if X.ndim != 2:
            raise ShapeError(f"contexts must be 2-dimensional, got shape {X.shape}")
        r = np.asarray(self.rewards, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (X.shape[0] == r.shape[0] == w.shape[0]):
            raise ShapeError(
                f"history lengths differ: {X.shape[0]} contexts, {r.shape[0]} rewards, "
                f"{w.shape[0]} weights"
            )
        if np.any(w <= 0):
            raise ParameterError("history weights must be positive")
        object.__setattr__(self, "contexts", X)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, n_features: int, arm_id: int = 0) -> "ArmHistory":
        return cls(np.empty((0, n_features)), np.empty(0), np.empty(0), arm_id)

    @classmethod
    def unweighted(cls, contexts, rewards, arm_id: int = 0) -> "ArmHistory":
        rewards = np.asarray(rewards, dtype=float)
        return cls(contexts, rewards, np.ones(rewards.shape[0]), arm_id)

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def n_features(self) -> int:
        return self.contexts.shape[1]

    def with_weights(self, weights) -> "ArmHistory":
        return ArmHistory(self.contexts, self.rewards, weights, self.arm_id)

    def append(self, x, reward: float, weight: float = 1.0) -> "ArmHistory":
        x = check_vector(x, "x", self.n_features if len(self) else None)
        X = np.vstack([self.contexts.reshape(-1, x.shape[0]), x])
        return ArmHistory(
            X,
            np.append(self.rewards, reward),
            np.append(self.weights, weight),
            self.arm_id,
        )


@dataclass(frozen=True)
class FittedArmModel:
    """Ridge point estimate, its precision matrix and the coefficient covariance."""

    theta_hat: np.ndarray
    precision: np.ndarray
    covariance: np.ndarray
    regularization: float
    residual_scale: float = EMPTY_HISTORY_SCALE
    n_obs: int = field(default=0)

    @property
    def n_features(self) -> int:
        return self.theta_hat.shape[0]

    @cached_property
    def covariance_factor(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance (zero matrix if the covariance vanishes)."""
        if not np.any(self.covariance):
            return np.zeros_like(self.covariance)
        return cholesky_jittered(self.covariance)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "precision": self.precision.tolist(),
            "covariance": self.covariance.tolist(),
            "regularization": self.regularization,
            "residual_scale": self.residual_scale,
            "n_obs": self.n_obs,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedArmModel":
        return cls(
            theta_hat=np.asarray(data["theta_hat"], dtype=float),
            precision=np.asarray(data["precision"], dtype=float),
            covariance=np.asarray(data["covariance"], dtype=float),
            regularization=float(data["regularization"]),
            residual_scale=float(data["residual_scale"]),
            n_obs=int(data["n_obs"]),
        )


def fit_weighted_ridge(history: ArmHistory, lam: float, n_features: int | None = None) -> FittedArmModel:
    """Fit ``theta = (X'WX + lam I)^{-1} X'W r`` and its residual-scaled covariance.

    The covariance is ``B^{-1} * (r - X theta)' W (r - X theta)`` with no
    degrees-of-freedom normalization. An empty history yields the prior
    ``theta = 0``, ``B = lam I`` and covariance ``B^{-1}``.
    """
    lam = check_positive(lam, "lambda")
    X, r, w = history.contexts, history.rewards, history.weights
    d = X.shape[1] if X.shape[1] or n_features is None else n_features
    if n_features is not None and d != n_features:
        raise ShapeError(f"history has {d} features, expected {n_features}")
    if X.shape[0] == 0:
        X = X.reshape(0, d)
    Xw = X * w[:, None]
    B = Xw.T @ X + lam * np.eye(d)
    B = 0.5 * (B + B.T)
    L = cholesky_jittered(B)
    if X.shape[0] == 0:
        theta = np.zeros(d)
        scale = EMPTY_HISTORY_SCALE
    else:
        theta = linalg.cho_solve((L, True), Xw.T @ r)
        resid = r - X @ theta
        scale = float(resid @ (w * resid))
    cov = linalg.cho_solve((L, True), np.eye(d)) * scale
    return FittedArmModel(theta, B, 0.5 * (cov + cov.T), lam, scale, X.shape[0])


def predict_mean_var(model: FittedArmModel, x) -> tuple[float, float]:
    """Return the predicted mean ``x'theta`` and its variance ``x'Vx`` (floored at 0)."""
    x = check_vector(x, "x", model.n_features)
    mu = float(x @ model.theta_hat)
    s2 = float(x @ model.covariance @ x)
    return mu, max(s2, 0.0)


def cross_validate_lambda(X, y, w, lambda_grid, n_folds: int = 5, min_obs: int = 10) -> float:
    """Pick the ridge penalty minimizing held-out weighted squared error.

    Folds are assigned by row index modulo ``n_folds`` so no randomness is
    consumed. Histories shorter than ``min_obs`` fall back to the grid median.
    """
    grid = np.sort(np.asarray(lambda_grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ParameterError("lambda_grid must be non-empty and positive")
    n = X.shape[0]
    if grid.size == 1:
        return float(grid[0])
    if n < min_obs:
        return float(grid[(grid.size - 1) // 2])
    folds = np.arange(n) % n_folds
    Xw = X * w[:, None]
    G_all = Xw.T @ X
    b_all = Xw.T @ y
    errors = np.zeros(grid.size)
    for k in range(n_folds):
        held = folds == k
        G = G_all - Xw[held].T @ X[held]
        b = b_all - Xw[held].T @ y[held]
        # one eigendecomposition serves every penalty on the grid
        evals, evecs = np.linalg.eigh(0.5 * (G + G.T))
        proj = evecs.T @ b
        thetas = evecs @ (proj[:, None] / (np.maximum(evals, 0.0)[:, None] + grid[None, :]))
        resid = y[held][:, None] - X[held] @ thetas
        errors += (w[held][:, None] * resid**2).sum(axis=0)
    return float(grid[int(np.argmin(errors))])


class WeightedRidge(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit_weighted_ridge`.

    Parameters
    ----------
    alpha : float
        Ridge penalty. Ignored when ``lambda_grid`` is given.
    lambda_grid : sequence of float, optional
        Candidate penalties selected by 5-fold cross-validation at each fit.
    """

    def __init__(self, alpha: float = 1.0, lambda_grid=None):
        self.alpha = alpha
        self.lambda_grid = lambda_grid

    def fit(self, X, y, sample_weight=None):
        X, y, w = check_xy(X, y, sample_weight)
        if self.lambda_grid is not None:
            lam = cross_validate_lambda(X, y, w, self.lambda_grid)
        else:
            lam = self.alpha
        self.model_ = fit_weighted_ridge(ArmHistory(X, y, w), lam, X.shape[1])
        self.coef_ = self.model_.theta_hat
        self.alpha_ = lam
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std: bool = False):
        X = check_matrix(X, n_features=self.n_features_in_)
        mu = X @ self.model_.theta_hat
        if not return_std:
            return mu
        var = np.einsum("ij,jk,ik->i", X, self.model_.covariance, X)
        return mu, np.sqrt(np.maximum(var, 0.0))
