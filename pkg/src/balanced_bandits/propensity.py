"""Assignment probabilities for Thompson and UCB policies and the derived balancing weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import (
    check_gamma,
    check_matrix,
    check_non_negative,
    check_positive,
    check_positive_int,
)
from .exceptions import ParameterError, ShapeError, StateError
from .ridge import FittedArmModel


def clip_to_weight(p, gamma: float):
    """Inverse propensity weight ``1 / max(gamma, p)``, bounded in ``[1, 1/gamma]``."""
    gamma = check_gamma(gamma)
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr > 1)):
        raise ParameterError("propensities must lie in [0, 1]")
    w = 1.0 / np.maximum(gamma, p_arr)
    return float(w) if np.ndim(p) == 0 else w


@dataclass(frozen=True)
class ModelSnapshot:
    """Per-arm models as they stood after a refit at ``snapshot_time``.

    ``models[a] is None`` means arm ``a`` had not been fitted yet, in which
    case the policy was still assigning uniformly at random.
    """

    models: tuple
    snapshot_time: int

    @property
    def is_uniform(self) -> bool:
        return any(m is None for m in self.models)


class SnapshotStore:
    """Append-only store of model snapshots with stacked arrays for fast sampling."""

    def __init__(self):
        self.snapshots: list[ModelSnapshot] = []
        self._uniform = None
        self._means = None
        self._factors = None

    def __len__(self) -> int:
        return len(self.snapshots)

    def append(self, snapshot: ModelSnapshot) -> None:
        if self.snapshots and snapshot.snapshot_time <= self.snapshots[-1].snapshot_time:
            raise StateError("snapshot times must be strictly increasing")
        self.snapshots.append(snapshot)
        if self._means is not None:
            self._push(len(self.snapshots) - 1)

    def _push(self, i: int) -> None:
        snap = self.snapshots[i]
        K, d = self._means.shape[1:]
        if snap.is_uniform:
            entry = np.zeros((K, d)), np.zeros((K, d, d))
        else:
            if self._means.shape[2] != snap.models[0].n_features:
                self._means = None
                return
            entry = (np.array([m.theta_hat for m in snap.models]),
                     np.array([m.covariance_factor for m in snap.models]))
        if i >= self._means.shape[0]:
            grow = max(i, 8)
            self._uniform = np.concatenate([self._uniform, np.zeros(grow, dtype=bool)])
            self._means = np.concatenate([self._means, np.zeros((grow, K, d))])
            self._factors = np.concatenate([self._factors, np.zeros((grow, K, d, d))])
        self._uniform[i] = snap.is_uniform
        self._means[i], self._factors[i] = entry

    def stacked(self):
        """Arrays ``(uniform[S], means[S,K,d], factors[S,K,d,d])`` over stored snapshots."""
        S = len(self.snapshots)
        if self._means is None:
            K = len(self.snapshots[0].models)
            d = next((m.n_features for s in self.snapshots for m in s.models if m is not None), 0)
            self._uniform = np.zeros(S, dtype=bool)
            self._means = np.zeros((S, K, d))
            self._factors = np.zeros((S, K, d, d))
            for i in range(S):
                self._push(i)
        return self._uniform[:S], self._means[:S], self._factors[:S]


def ts_propensities_mc(snapshots, X, alpha: float, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo Thompson sampling propensities for each row of ``X``.

    Every iteration picks a stored snapshot uniformly at random, draws one
    coefficient vector per arm from ``N(theta_hat, alpha^2 V)`` and credits
    the arm with the largest sampled reward (ties share the credit). Draws
    from a snapshot taken before every arm was fitted credit ``1/K`` to each
    arm. Returns an ``(n_contexts, K)`` array whose rows sum to one.
    """
    store = snapshots if isinstance(snapshots, SnapshotStore) else _as_store(snapshots)
    if len(store) == 0:
        raise StateError("no model snapshots available for propensity estimation")
    alpha = check_non_negative(alpha, "alpha")
    n_draws = check_positive_int(n_draws, "n_draws")
    uniform, means, factors = store.stacked()
    S, K, d = means.shape
    X = check_matrix(X, n_features=d if d else None)
    if uniform.all():
        return np.full((X.shape[0], K), 1.0 / K)

    idx = rng.integers(S, size=n_draws)
    z = rng.standard_normal((n_draws, K, d))
    theta = means[idx] + alpha * np.einsum("nkij,nkj->nki", factors[idx], z)
    scores = np.einsum("nkd,md->nkm", theta, X)
    is_max = scores >= scores.max(axis=1, keepdims=True)
    credit = is_max / is_max.sum(axis=1, keepdims=True)
    credit[uniform[idx]] = 1.0 / K
    probs = credit.sum(axis=0).T / n_draws
    return probs / probs.sum(axis=1, keepdims=True)


def ts_propensity_mc(snapshots, x, alpha: float, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Single-context version of :func:`ts_propensities_mc`."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"x must be 1-dimensional, got shape {x.shape}")
    return ts_propensities_mc(snapshots, x[None, :], alpha, n_draws, rng)[0]


def _as_store(snapshots) -> SnapshotStore:
    store = SnapshotStore()
    for snap in snapshots:
        if not isinstance(snap, ModelSnapshot):
            snap = ModelSnapshot(tuple(snap), len(store))
        store.append(snap)
    return store


def _logit_objective(flat, X, Y, l2):
    n_classes = Y.shape[1]
    W = flat.reshape(n_classes, X.shape[1])
    logits = X @ W.T
    logp = log_softmax(logits, axis=1)
    loss = -np.sum(Y * logp) + 0.5 * l2 * np.sum(W * W)
    grad = (np.exp(logp) - Y).T @ X + l2 * W
    return loss, grad.ravel()


class MultinomialLogit(ClassifierMixin, BaseEstimator):
    """L2-penalized softmax regression with one weight vector per class.

    All classes are penalized symmetrically, so no pivot class is needed.
    The objective is the summed negative log-likelihood plus
    ``l2/2 * ||W||^2``, minimized by L-BFGS. ``converged_`` is set when the
    gradient norm at the returned iterate is at most ``tol``; otherwise the
    best iterate is kept and the flag is False.
    """

    def __init__(self, l2: float = 1.0, n_classes=None, fit_intercept: bool = True,
                 max_iter: int = 500, tol: float = 1e-5, warm_start: bool = False):
        self.l2 = l2
        self.n_classes = n_classes
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.tol = tol
        self.warm_start = warm_start

    def _design(self, X):
        X = check_matrix(X)
        if self.fit_intercept:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def fit(self, X, y):
        l2 = check_non_negative(self.l2, "l2")
        check_positive(self.tol, "tol")
        Z = self._design(X)
        y = np.asarray(y, dtype=int).reshape(-1)
        if y.shape[0] != Z.shape[0]:
            raise ShapeError(f"X has {Z.shape[0]} rows but y has {y.shape[0]} labels")
        if y.size == 0:
            raise StateError("cannot fit a propensity model without observations")
        K = int(self.n_classes) if self.n_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= K:
            raise ShapeError(f"labels must lie in 0..{K - 1}")
        Y = np.eye(K)[y]
        shape = (K, Z.shape[1])
        if self.warm_start and getattr(self, "coef_full_", None) is not None and self.coef_full_.shape == shape:
            x0 = self.coef_full_.ravel()
        else:
            x0 = np.zeros(K * Z.shape[1])
        res = optimize.minimize(
            _logit_objective, x0, args=(Z, Y, l2), jac=True, method="L-BFGS-B",
            options={"maxiter": int(self.max_iter), "gtol": 0.1 * self.tol, "ftol": 1e-15},
        )
        _, grad = _logit_objective(res.x, Z, Y, l2)
        self.coef_full_ = res.x.reshape(shape)
        self.grad_norm_ = float(np.linalg.norm(grad))
        self.converged_ = self.grad_norm_ <= self.tol
        self.n_iter_ = int(res.nit)
        self.classes_ = np.arange(K)
        self.n_features_in_ = Z.shape[1] - int(self.fit_intercept)
        return self

    def decision_function(self, X):
        return self._design(X) @ self.coef_full_.T

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


def ucb_propensity_logistic(contexts, assigned_arms, l2: float = 1.0, max_iter: int = 500,
                            tol: float = 1e-5, n_classes=None) -> MultinomialLogit:
    """Fit the multinomial model of assigned arm on context used to estimate UCB propensities."""
    return MultinomialLogit(l2=l2, n_classes=n_classes, max_iter=max_iter, tol=tol).fit(
        contexts, assigned_arms
    )
