"""Bootstrap ensembles of ridge or LASSO fits as approximate posteriors."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._validation import check_gamma, check_non_negative, check_positive, check_positive_int
from .exceptions import NumericalError, ParameterError, ShapeError, StateError
from .lasso import MAX_SWEEPS, cross_validate_lasso, lambda_max, lasso_gram
from .linalg import spd_solve
from .propensity import clip_to_weight
from .ridge import ArmHistory
from .policies.base import ContextualBandit

logger = logging.getLogger(__name__)

SOLVERS = ("ridge", "lasso")
DRAW_MODES = ("member", "gaussian")
RIDGE_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
# LASSO penalties are chosen relative to the smallest penalty that zeroes every coefficient.
LASSO_RELATIVE_GRID = (0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005)
MAX_REDRAWS = 10
BOOTSTRAP_REL_TOL = 1e-4
BOOTSTRAP_MAX_SWEEPS = 200


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Coefficient vectors fitted on bootstrap resamples of one arm's history.

    ``n_flagged`` counts resamples whose fit still failed after the allowed
    redraws; those members hold the last attempted solution.
    ``n_unconverged`` counts LASSO members that hit the sweep cap and keep
    their last coordinate-descent iterate.
    """

    coefficient_samples: np.ndarray
    solver: str
    regularization: float
    n_flagged: int = 0
    n_unconverged: int = 0

    def __post_init__(self):
        S = np.asarray(self.coefficient_samples, dtype=float)
        if S.ndim != 2 or S.shape[0] < 2:
            raise ShapeError("an ensemble needs at least two coefficient vectors")
        object.__setattr__(self, "coefficient_samples", S)

    def __len__(self) -> int:
        return self.coefficient_samples.shape[0]

    @property
    def n_features(self) -> int:
        return self.coefficient_samples.shape[1]

    @property
    def mean_coef(self) -> np.ndarray:
        return self.coefficient_samples.mean(axis=0)

    def predict_samples(self, X) -> np.ndarray:
        """Per-member predictions with shape ``(n_contexts, n_members)``."""
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.coefficient_samples.T

    def mean_var(self, x) -> tuple[float, float]:
        """Ensemble mean and sample variance of ``x' theta``."""
        preds = self.coefficient_samples @ np.asarray(x, dtype=float)
        return float(preds.mean()), float(preds.var(ddof=1))


def _penalty_factor(p: int, unpenalized=()) -> np.ndarray:
    pf = np.ones(p)
    pf[list(unpenalized)] = 0.0
    return pf


def _solve(G, c, solver, lam, pf, theta0, max_sweeps=BOOTSTRAP_MAX_SWEEPS):
    """One regularized fit from sufficient statistics; returns ``(theta, ok, converged)``.

    The LASSO KKT tolerance is taken relative to ``max(1, ||X'Wr||_inf)``
    because resample counts inflate the gradient scale. ``ok`` is False
    only for a failed solve (singular system, non-finite result).
    """
    if solver == "ridge":
        try:
            theta = spd_solve(G + lam * np.diag(pf), c)
        except NumericalError:
            return np.zeros_like(c), False, False
        ok = bool(np.all(np.isfinite(theta)))
        return theta, ok, ok
    tol = BOOTSTRAP_REL_TOL * max(1.0, float(np.max(np.abs(c), initial=0.0)))
    theta, converged, _ = lasso_gram(G, c, lam, pf, theta0, max_sweeps, tol)
    return theta, bool(np.all(np.isfinite(theta))), bool(converged)


def bootstrap_posterior(history: ArmHistory, solver: str = "lasso", lam: float = 1.0,
                        n_boot: int = 100, rng=None, unpenalized=(),
                        max_redraws: int = MAX_REDRAWS) -> BootstrapEnsemble:
    """Fit ``n_boot`` regularized regressions on resamples of ``history``.

    Rows are resampled with replacement and keep their balancing weights,
    which amounts to multiplying each weight by its resample count. A
    resample whose fit fails (singular system, LASSO non-convergence) is
    redrawn up to ``max_redraws`` times before it is kept and flagged.
    The LASSO fits are warm-started from the full-sample solution and capped
    at ``BOOTSTRAP_MAX_SWEEPS`` sweeps; a capped fit is counted in
    ``n_unconverged`` but not redrawn.
    """
    if solver not in SOLVERS:
        raise ParameterError(f"solver must be one of {SOLVERS}, got {solver!r}")
    lam = check_non_negative(lam, "lambda")
    n_boot = check_positive_int(n_boot, "n_boot")
    if n_boot < 2:
        raise ParameterError("n_boot must be at least 2")
    n = len(history)
    if n == 0:
        raise StateError("cannot bootstrap an empty history")
    rng = np.random.default_rng(rng)
    X, r, w = history.contexts, history.rewards, history.weights
    p = X.shape[1]
    pf = _penalty_factor(p, unpenalized)
    Xw = X * w[:, None]
    theta_full, ok, _ = _solve(Xw.T @ X, Xw.T @ r, solver, lam, pf, np.zeros(p), MAX_SWEEPS)
    if not ok:
        theta_full = np.zeros(p)

    samples = np.empty((n_boot, p))
    flagged = unconverged = 0
    for b in range(n_boot):
        for _ in range(max_redraws + 1):
            counts = rng.multinomial(n, np.full(n, 1.0 / n))
            keep = counts > 0
            Xk = X[keep]
            Xc = Xk * (counts[keep] * w[keep])[:, None]
            theta, ok, converged = _solve(Xc.T @ Xk, Xc.T @ r[keep], solver, lam, pf, theta_full)
            if ok:
                break
        else:
            flagged += 1
        unconverged += not converged
        samples[b] = theta
    if flagged:
        logger.warning("%d of %d bootstrap fits failed after %d redraws", flagged, n_boot, max_redraws)
    return BootstrapEnsemble(samples, solver, lam, flagged, unconverged)


def choose_penalty(history: ArmHistory, solver: str, lambda_grid=None, unpenalized=(),
                   n_folds: int = 5, min_obs: int = 10) -> float:
    """Cross-validated penalty on the full (weighted) history with index-modulo folds.

    For LASSO a ``None`` grid means fractions of the data-dependent
    ``lambda_max``; for ridge it means a fixed logarithmic grid.
    """
    X, r, w = history.contexts, history.rewards, history.weights
    p = X.shape[1]
    pf = _penalty_factor(p, unpenalized)
    if solver == "lasso":
        if lambda_grid is None:
            lmax = lambda_max(X, r, w, pf) if len(history) else 1.0
            grid = max(lmax, 1e-8) * np.asarray(LASSO_RELATIVE_GRID)
        else:
            grid = np.asarray(lambda_grid, dtype=float)
        tol = BOOTSTRAP_REL_TOL * max(1.0, float(np.max(np.abs(X.T @ (w * r)), initial=0.0)))
        return cross_validate_lasso(X, r, w, grid, pf, n_folds, min_obs,
                                    max_sweeps=BOOTSTRAP_MAX_SWEEPS, tol=tol)

    grid = np.asarray(RIDGE_GRID if lambda_grid is None else lambda_grid, dtype=float)
    n = X.shape[0]
    if grid.size == 1:
        return float(grid[0])
    if n < min_obs:
        return float(np.sort(grid)[(grid.size - 1) // 2])
    folds = np.arange(n) % n_folds
    Xw = X * w[:, None]
    G_all, c_all = Xw.T @ X, Xw.T @ r
    errors = np.zeros(grid.size)
    for k in range(n_folds):
        held = folds == k
        G = G_all - Xw[held].T @ X[held]
        c = c_all - Xw[held].T @ r[held]
        for i, lam in enumerate(grid):
            theta = spd_solve(G + lam * np.diag(pf), c)
            resid = r[held] - X[held] @ theta
            errors[i] += resid @ (w[held] * resid)
    return float(grid[int(np.argmin(errors))])


def member_argmax_probabilities(preds: np.ndarray) -> np.ndarray:
    """Probability that each arm wins when every arm plays one uniformly drawn member.

    ``preds`` has shape ``(K, B)``: the prediction of each ensemble member of
    each arm at a single context. Computed exactly by counting, with ties
    between arms split evenly only in the degenerate case of equal values.
    """
    preds = np.asarray(preds, dtype=float)
    K, B = preds.shape
    sorted_preds = np.sort(preds, axis=1)
    probs = np.zeros(K)
    for a in range(K):
        v = preds[a]
        # for every member value of arm a: probability every other arm draws something lower
        win = np.ones(B)
        tie = np.ones(B)
        for other in range(K):
            if other == a:
                continue
            below = np.searchsorted(sorted_preds[other], v, side="left") / B
            at_or_below = np.searchsorted(sorted_preds[other], v, side="right") / B
            win *= below
            tie *= at_or_below
        # ties are rare with continuous predictions; give them an even share
        probs[a] = np.mean(win + (tie - win) / 2.0)
    return probs / probs.sum()


class BootstrapTS(ContextualBandit):
    """Thompson sampling with bootstrap-ensemble posteriors over ridge or LASSO fits.

    Parameters
    ----------
    solver : {"lasso", "ridge"}
    n_boot : int
        Bootstrap resamples per arm and refit.
    draw : {"member", "gaussian"}
        ``member`` plays one uniformly chosen ensemble member per arm;
        ``gaussian`` samples ``N(mean, alpha^2 var)`` of the ensemble
        predictions at the current context.
    alpha : float
        Spread multiplier, used by the ``gaussian`` draw only.
    lambda_grid : sequence of float or None
        Penalties for cross-validation (see :func:`choose_penalty`).
    unpenalized : tuple of int
        Feature columns left out of the penalty, typically the intercept.
    gamma : float
        Clipping threshold for inverse-propensity weights; 1 disables
        balancing. Propensities are computed when each arm is selected.
    refit_cadence : int
    random_state : int or None
    """

    def __init__(self, solver: str = "lasso", n_boot: int = 100, draw: str = "member",
                 alpha: float = 1.0, lambda_grid=None, unpenalized=(), gamma: float = 1.0,
                 refit_cadence: int = 10, n_mc_draws: int = 1000, random_state=None):
        self.solver = solver
        self.n_boot = n_boot
        self.draw = draw
        self.alpha = alpha
        self.lambda_grid = lambda_grid
        self.unpenalized = unpenalized
        self.gamma = gamma
        self.refit_cadence = refit_cadence
        self.n_mc_draws = n_mc_draws
        self.random_state = random_state

    @property
    def is_balanced(self) -> bool:
        return self.gamma < 1

    def _on_start(self):
        if self.solver not in SOLVERS:
            raise ParameterError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.draw not in DRAW_MODES:
            raise ParameterError(f"draw must be one of {DRAW_MODES}, got {self.draw!r}")
        check_positive_int(self.n_boot, "n_boot")
        check_non_negative(self.alpha, "alpha")
        check_gamma(self.gamma, allow_one=True)
        self.penalties_ = [None] * self.state_.n_arms
        self._pending = None

    def _predictions(self, x):
        return np.array([m.coefficient_samples @ x for m in self.state_.models])

    def _scores(self, x, rng):
        preds = self._predictions(x)
        K, B = preds.shape
        if self.draw == "member":
            return preds[np.arange(K), rng.integers(B, size=K)]
        mu = preds.mean(axis=1)
        sd = preds.std(axis=1, ddof=1)
        return mu + self.alpha * sd * rng.standard_normal(K)

    def selection_probabilities(self, x) -> np.ndarray:
        """Probability of each arm being selected at ``x`` by the current ensembles."""
        K = self.state_.n_arms
        if any(m is None for m in self.state_.models):
            return np.full(K, 1.0 / K)
        preds = self._predictions(np.asarray(x, dtype=float))
        if self.draw == "member":
            return member_argmax_probabilities(preds)
        mu = preds.mean(axis=1)
        sd = preds.std(axis=1, ddof=1)
        draws = mu + self.alpha * sd * self._rng.standard_normal((self.n_mc_draws, K))
        return np.bincount(np.argmax(draws, axis=1), minlength=K) / self.n_mc_draws

    def select_arm(self, x, rng=None) -> int:
        arm = super().select_arm(x, rng)
        if self.is_balanced:
            x = np.asarray(x, dtype=float)
            self._pending = (x.copy(), self.selection_probabilities(x))
        return arm

    def update(self, x, arm, reward, rng=None, propensity=None):
        if propensity is None and self._pending is not None:
            x_sel, probs = self._pending
            if np.array_equal(x_sel, np.asarray(x, dtype=float)):
                propensity = float(probs[arm])
        self._pending = None
        return super().update(x, arm, reward, rng, propensity)

    def predict_means(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.column_stack([
            np.full(X.shape[0], np.nan) if m is None else X @ m.mean_coef
            for m in self.state_.models
        ])

    def _refit(self):
        st = self.state_
        for a in range(st.n_arms):
            if st.n_obs(a) == 0:
                continue
            if self.is_balanced:
                p = np.asarray(st.propensities[a], dtype=float)
                # observations without a recorded propensity keep unit weight
                st.weights[a] = np.where(np.isnan(p), 1.0, clip_to_weight(np.nan_to_num(p, nan=1.0), self.gamma))
            hist = st.history(a)
            lam = choose_penalty(hist, self.solver, self.lambda_grid, self.unpenalized)
            self.penalties_[a] = lam
            st.models[a] = bootstrap_posterior(hist, self.solver, lam, self.n_boot, self._rng,
                                               self.unpenalized)
