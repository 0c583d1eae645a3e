"""Bayesian LASSO Gibbs sampler and the Thompson sampling policy built on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from ._validation import check_positive, check_positive_int, check_vector
from .exceptions import ParameterError, ShapeError
from .linalg import cholesky_jittered
from .policies.base import ContextualBandit

logger = logging.getLogger(__name__)

PRECISION_FORMS = ("as_paper", "inverse")
MU_CLAMP = 1e8
THETA_FLOOR = 1e-8


@dataclass(frozen=True)
class GibbsState:
    """Current draw of the coefficient vector and its local scale parameters.

    ``clamped`` records whether the last inverse-Gaussian update hit the
    mean clamp for at least one coordinate.
    """

    theta: np.ndarray
    tau_sq: np.ndarray
    sigma_sq: float
    lam: float
    clamped: bool = False

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        tau_sq = np.asarray(self.tau_sq, dtype=float).reshape(-1)
        if theta.shape != tau_sq.shape:
            raise ShapeError("theta and tau_sq must have the same length")
        if np.any(tau_sq <= 0):
            raise ParameterError("tau_sq entries must be positive")
        check_positive(self.sigma_sq, "sigma_sq")
        check_positive(self.lam, "lambda")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "tau_sq", tau_sq)


def inverse_gaussian(mu, shape, rng: np.random.Generator, size=None) -> np.ndarray:
    """Inverse-Gaussian draws by the transformation-with-acceptance method.

    A chi-square(1) variate is mapped to the smaller root of the
    first-passage equation, and the larger root ``mu^2 / x`` is returned
    instead with probability ``x / (mu + x)``.
    """
    mu = np.asarray(mu, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if np.any(mu <= 0) or np.any(shape <= 0):
        raise ParameterError("inverse-Gaussian parameters must be positive")
    size = np.broadcast(mu, shape).shape if size is None else size
    y = rng.standard_normal(size) ** 2
    muy = mu * y
    x = mu + mu * muy / (2 * shape) - mu / (2 * shape) * np.sqrt(4 * shape * muy + muy * muy)
    # for extreme mu the root can underflow; the large root then carries the mass
    x = np.maximum(x, np.finfo(float).tiny)
    u = rng.random(size)
    big = u > mu / (mu + x)
    out = np.array(x, dtype=float)
    mu_b = np.broadcast_to(mu, out.shape)
    out[big] = mu_b[big] ** 2 / x[big]
    return out


def _precision_diagonal(tau_sq, form):
    return tau_sq if form == "as_paper" else 1.0 / tau_sq


def theta_conditional(gram, xtr, tau_sq, sigma_sq: float, form: str = "as_paper"):
    """Mean and Cholesky factor of ``A`` for ``theta | tau, sigma ~ N(A^-1 X'r, sigma^2 A^-1)``.

    ``A = X'X + D`` where ``D = diag(tau_sq)`` for ``form="as_paper"`` and
    ``diag(1/tau_sq)`` for ``form="inverse"``.
    """
    if form not in PRECISION_FORMS:
        raise ParameterError(f"form must be one of {PRECISION_FORMS}, got {form!r}")
    A = np.asarray(gram, dtype=float) + np.diag(_precision_diagonal(tau_sq, form))
    L = cholesky_jittered(A)
    mean = linalg.cho_solve((L, True), np.asarray(xtr, dtype=float))
    return mean, L


def _step_from_stats(state: GibbsState, gram, xtr, rng, form) -> GibbsState:
    lam2 = state.lam**2
    abs_theta = np.maximum(np.abs(state.theta), THETA_FLOOR)
    mu = np.sqrt(lam2 * state.sigma_sq) / abs_theta
    clamped = bool(np.any(mu > MU_CLAMP))
    if clamped:
        mu = np.minimum(mu, MU_CLAMP)
    tau_sq = inverse_gaussian(mu, lam2, rng)
    mean, L = theta_conditional(gram, xtr, tau_sq, state.sigma_sq, form)
    z = rng.standard_normal(mean.shape[0])
    theta = mean + np.sqrt(state.sigma_sq) * linalg.solve_triangular(L, z, lower=True, trans="T")
    return replace(state, theta=theta, tau_sq=tau_sq, clamped=clamped)


def bayesian_lasso_gibbs_step(state: GibbsState, X, r, rng: np.random.Generator,
                              form: str = "as_paper") -> GibbsState:
    """One sweep: refresh every ``tau_j^2`` from its inverse-Gaussian conditional, then ``theta``.

    ``X`` may have zero rows, in which case ``theta`` is drawn from its
    conditional prior.
    """
    p = state.theta.shape[0]
    X = np.asarray(X, dtype=float).reshape(-1, p)
    r = np.asarray(r, dtype=float).reshape(-1)
    if X.shape[0] != r.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows but r has {r.shape[0]} entries")
    new = _step_from_stats(state, X.T @ X, X.T @ r, rng, form)
    if new.clamped:
        logger.warning("inverse-Gaussian mean clamped at %g", MU_CLAMP)
    return new


def initial_gibbs_state(n_features: int, lam: float, sigma_sq: float, rng) -> GibbsState:
    """Prior draw: ``tau_j^2`` iid exponential with rate ``lam^2/2``, then ``theta ~ N(0, sigma^2 D_tau)``."""
    lam = check_positive(lam, "lambda")
    sigma_sq = check_positive(sigma_sq, "sigma_sq")
    tau_sq = rng.exponential(2.0 / lam**2, size=n_features)
    theta = np.sqrt(sigma_sq * tau_sq) * rng.standard_normal(n_features)
    return GibbsState(theta, tau_sq, sigma_sq, lam)


def run_chain(X, r, n_steps: int, lam: float = 1.0, sigma_sq: float = 1.0, rng=None,
              form: str = "as_paper", state: GibbsState | None = None) -> np.ndarray:
    """Run ``n_steps`` Gibbs sweeps and return the ``theta`` draws, one row per sweep."""
    rng = np.random.default_rng(rng)
    X = np.asarray(X, dtype=float)
    r = np.asarray(r, dtype=float)
    if state is None:
        state = initial_gibbs_state(X.shape[1], lam, sigma_sq, rng)
    gram, xtr = X.T @ X, X.T @ r
    draws = np.empty((n_steps, X.shape[1]))
    for k in range(n_steps):
        state = _step_from_stats(state, gram, xtr, rng, form)
        draws[k] = state.theta
    return draws


def residual_variance(X, r, ridge: float = 1.0, default: float = 1.0) -> float:
    """Residual variance of a ridge pre-fit, or ``default`` when there are too few rows."""
    n, p = X.shape
    if n <= p + 1:
        return default
    theta = np.linalg.solve(X.T @ X + ridge * np.eye(p), X.T @ r)
    resid = r - X @ theta
    return max(float(resid @ resid) / (n - p), 1e-6)


class BayesianLassoTS(ContextualBandit):
    """Thompson sampling where every arm carries a Bayesian LASSO Gibbs chain.

    Each arm starts from a prior draw. After an arm is played, its chain
    runs ``n_gibbs`` sweeps warm-started from its current state and one of
    the retained draws, picked uniformly, becomes the arm's coefficient
    vector; every other arm keeps its vector. Arms are then chosen greedily
    on ``x' theta_a``.

    Parameters
    ----------
    lam : float
        Laplace prior rate.
    sigma_sq : float or None
        Noise variance. ``None`` re-estimates it at each update from the
        residuals of a unit ridge fit on the arm's data (1 until the arm has
        more rows than features).
    n_gibbs : int
        Gibbs sweeps per update.
    gibbs_precision_form : {"as_paper", "inverse"}
        How the sampled local scales enter the conditional precision.
    random_state : int or None
    """

    refit_cadence = 1

    def __init__(self, lam: float = 1.0, sigma_sq=None, n_gibbs: int = 20,
                 gibbs_precision_form: str = "as_paper", random_state=None):
        self.lam = lam
        self.sigma_sq = sigma_sq
        self.n_gibbs = n_gibbs
        self.gibbs_precision_form = gibbs_precision_form
        self.random_state = random_state

    def _on_start(self):
        if self.gibbs_precision_form not in PRECISION_FORMS:
            raise ParameterError(f"gibbs_precision_form must be one of {PRECISION_FORMS}")
        check_positive_int(self.n_gibbs, "n_gibbs")
        st = self.state_
        p = st.n_features
        s2 = 1.0 if self.sigma_sq is None else check_positive(self.sigma_sq, "sigma_sq")
        self.chains_ = [initial_gibbs_state(p, self.lam, s2, self._rng) for _ in range(st.n_arms)]
        self._gram = [np.zeros((p, p)) for _ in range(st.n_arms)]
        self._xtr = [np.zeros(p) for _ in range(st.n_arms)]
        st.models = [c.theta for c in self.chains_]

    def _scores(self, x, rng):
        return np.array([x @ theta for theta in self.state_.models])

    def predict_means(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ np.array(self.state_.models).T

    def _advance(self, arm: int):
        st = self.state_
        chain = self.chains_[arm]
        if self.sigma_sq is None:
            X, r = st.arm_arrays(arm)
            chain = replace(chain, sigma_sq=residual_variance(X, r))
        draws = []
        for _ in range(self.n_gibbs):
            chain = _step_from_stats(chain, self._gram[arm], self._xtr[arm], self._rng,
                                     self.gibbs_precision_form)
            draws.append(chain.theta)
        self.chains_[arm] = chain
        st.models[arm] = draws[int(self._rng.integers(len(draws)))]

    def update(self, x, arm: int, reward: float, rng=None, propensity=None):
        self._check_started()
        st = self.state_
        x = check_vector(x, "x", st.n_features)
        if not 0 <= arm < st.n_arms:
            raise ShapeError(f"arm {arm} outside 0..{st.n_arms - 1}")
        st.contexts[arm].append(x)
        st.rewards[arm].append(float(reward))
        st.propensities[arm].append(np.nan if propensity is None else float(propensity))
        st.steps[arm].append(st.t)
        st.t += 1
        self._gram[arm] += np.outer(x, x)
        self._xtr[arm] += float(reward) * x
        self._advance(arm)
        st.last_refit = st.t
        return self

    def _refit(self):
        st = self.state_
        for a in range(st.n_arms):
            X, r = st.arm_arrays(a)
            self._gram[a] = X.T @ X
            self._xtr[a] = X.T @ r
            if st.n_obs(a):
                self._advance(a)
