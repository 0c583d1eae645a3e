"""Weighted LASSO by cyclic coordinate descent on the Gram matrix."""

from __future__ import annotations

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import check_matrix, check_non_negative, check_positive_int, check_xy
from .exceptions import ShapeError

MAX_SWEEPS = 1000
TOL = 1e-7
KKT_EVERY = 4


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@njit(cache=True)
def _kkt_violation(G, c, theta, penalty):
    p = theta.shape[0]
    worst = 0.0
    for j in range(p):
        g = -c[j]
        for k in range(p):
            g += G[j, k] * theta[k]
        if theta[j] == 0.0:
            v = abs(g) - penalty[j]
        elif theta[j] > 0:
            v = abs(g + penalty[j])
        else:
            v = abs(g - penalty[j])
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _cd_gram(G, c, penalty, theta, max_sweeps, tol):
    p = theta.shape[0]
    q = G @ theta
    for sweep in range(max_sweeps):
        for j in range(p):
            gjj = G[j, j]
            old = theta[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                z = c[j] - q[j] + gjj * old
                if z > penalty[j]:
                    new = (z - penalty[j]) / gjj
                elif z < -penalty[j]:
                    new = (z + penalty[j]) / gjj
                else:
                    new = 0.0
            delta = new - old
            if delta != 0.0:
                theta[j] = new
                for k in range(p):
                    q[k] += delta * G[k, j]
        # the certificate costs as much as a sweep, so it is checked every few sweeps
        if (sweep % KKT_EVERY == KKT_EVERY - 1 or sweep == max_sweeps - 1) and \
                _kkt_violation(G, c, theta, penalty) <= tol:
            return theta, True, sweep + 1
    return theta, False, max_sweeps


def lasso_gram(G, c, lam, penalty_factor=None, theta0=None, max_sweeps: int = MAX_SWEEPS,
               tol: float = TOL):
    """Minimize ``theta' G theta / 2 - c' theta + lam * sum(pf_j |theta_j|)``.

    Returns ``(theta, converged, n_sweeps)``. Convergence is declared when the
    KKT certificate holds to ``tol``.
    """
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    p = c.shape[0]
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    return _cd_gram(G, c, lam * pf, theta, int(max_sweeps), float(tol))


def lasso_coordinate_descent(X, r, weights=None, lam: float = 1.0, max_sweeps: int = MAX_SWEEPS,
                             tol: float = TOL, penalty_factor=None, theta0=None):
    """Weighted LASSO ``(1/2) sum w_i (r_i - x_i'theta)^2 + lam * ||theta||_1``.

    Returns ``(theta, converged)``. When ``converged`` is False the last
    iterate after ``max_sweeps`` sweeps is returned.
    """
    X, r, w = check_xy(X, r, weights)
    lam = check_non_negative(lam, "lambda")
    check_positive_int(max_sweeps, "max_sweeps")
    Xw = X * w[:, None]
    theta, converged, _ = lasso_gram(Xw.T @ X, Xw.T @ r, lam, penalty_factor, theta0, max_sweeps, tol)
    return theta, converged


def kkt_violation(X, r, weights, lam: float, theta, penalty_factor=None) -> float:
    """Largest KKT residual of ``theta`` for the weighted LASSO problem."""
    X, r, w = check_xy(X, r, weights)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (X.shape[1],):
        raise ShapeError(f"theta has shape {theta.shape}, expected ({X.shape[1]},)")
    pf = np.ones(X.shape[1]) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    g = X.T @ (w * (X @ theta - r))
    pen = lam * pf
    viol = np.where(theta == 0, np.abs(g) - pen, np.abs(g + pen * np.sign(theta)))
    return float(max(viol.max(initial=0.0), 0.0))


def lambda_max(X, r, weights=None, penalty_factor=None) -> float:
    """Smallest penalty at which every penalized coefficient is zero (unpenalized ones absent)."""
    X, r, w = check_xy(X, r, weights)
    g = np.abs(X.T @ (w * r))
    pf = np.ones(X.shape[1]) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    active = pf > 0
    return float(np.max(g[active] / pf[active])) if np.any(active) else 0.0


def cross_validate_lasso(X, y, w, lambda_grid, penalty_factor=None, n_folds: int = 5,
                         min_obs: int = 10, max_sweeps: int = MAX_SWEEPS, tol: float = TOL) -> float:
    """Pick the LASSO penalty minimizing held-out weighted squared error (index-modulo folds)."""
    grid = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
    n = X.shape[0]
    if grid.size == 1:
        return float(grid[0])
    if n < min_obs:
        return float(np.sort(grid)[(grid.size - 1) // 2])
    folds = np.arange(n) % n_folds
    Xw = X * w[:, None]
    G_all, c_all = Xw.T @ X, Xw.T @ y
    errors = np.zeros(grid.size)
    for k in range(n_folds):
        held = folds == k
        G = G_all - Xw[held].T @ X[held]
        c = c_all - Xw[held].T @ y[held]
        theta = np.zeros(X.shape[1])
        for i, lam in enumerate(grid):
            theta, _, _ = lasso_gram(G, c, lam, penalty_factor, theta, max_sweeps, tol)
            resid = y[held] - X[held] @ theta
            errors[i] += resid @ (w[held] * resid)
    return float(grid[int(np.argmin(errors))])


class WeightedLasso(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around :func:`lasso_coordinate_descent`.

    ``unpenalized`` lists column indices (such as an intercept column) left
    out of the L1 penalty.
    """

    def __init__(self, alpha: float = 1.0, max_sweeps: int = MAX_SWEEPS, tol: float = TOL,
                 unpenalized=()):
        self.alpha = alpha
        self.max_sweeps = max_sweeps
        self.tol = tol
        self.unpenalized = unpenalized

    def fit(self, X, y, sample_weight=None):
        X, y, w = check_xy(X, y, sample_weight)
        pf = np.ones(X.shape[1])
        pf[list(self.unpenalized)] = 0.0
        self.coef_, self.converged_ = lasso_coordinate_descent(
            X, y, w, self.alpha, self.max_sweeps, self.tol, penalty_factor=pf
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = check_matrix(X, n_features=self.n_features_in_)
        return X @ self.coef_
