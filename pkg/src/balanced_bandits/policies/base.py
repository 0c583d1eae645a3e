"""Shared select/update machinery for contextual bandit policies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import as_generator, check_positive_int, check_vector
from ..exceptions import ParameterError, ShapeError, StateError
from ..ridge import ArmHistory


@dataclass
class PolicyState:
    """Mutable per-run state of a policy.

    ``propensities[a][i]`` is the assignment probability of the ``i``-th
    observation of arm ``a`` (NaN until it has been estimated) and
    ``steps[a][i]`` its global arrival index.
    """

    n_arms: int
    n_features: int
    t: int = 0
    contexts: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    propensities: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    models: list = field(default_factory=list)
    last_refit: int = 0

    def __post_init__(self):
        K = self.n_arms
        for name in ("contexts", "rewards", "propensities", "steps"):
            if not getattr(self, name):
                setattr(self, name, [[] for _ in range(K)])
        if not self.weights:
            self.weights = [np.empty(0) for _ in range(K)]
        if not self.models:
            self.models = [None] * K

    def n_obs(self, arm: int) -> int:
        return len(self.rewards[arm])

    def arm_arrays(self, arm: int):
        X = np.asarray(self.contexts[arm], dtype=float).reshape(-1, self.n_features)
        r = np.asarray(self.rewards[arm], dtype=float)
        return X, r

    def history(self, arm: int) -> ArmHistory:
        X, r = self.arm_arrays(arm)
        w = self.weights[arm]
        if w.shape[0] != r.shape[0]:
            w = np.ones(r.shape[0])
        return ArmHistory(X, r, w, arm)

    def all_history(self):
        """Contexts and assigned arms of every observation, in arrival order."""
        steps = np.concatenate([np.asarray(s, dtype=int) for s in self.steps])
        arms = np.concatenate([np.full(len(s), a) for a, s in enumerate(self.steps)])
        X = np.vstack([self.arm_arrays(a)[0] for a in range(self.n_arms)])
        order = np.argsort(steps, kind="stable")
        return X[order], arms[order], order


class ContextualBandit(BaseEstimator):
    """Base class: uniform assignment until every arm is fitted, then model-based choice.

    Subclasses implement :meth:`_refit` (update ``state_.models``) and
    :meth:`_scores` (one score per arm for a context; the arm with the
    largest score is played, ties broken uniformly at random).
    """

    refit_cadence = 10

    def start(self, n_arms: int, n_features: int):
        """Reset the policy for a new run with ``n_arms`` arms and ``n_features``-dim contexts."""
        n_arms = check_positive_int(n_arms, "n_arms")
        n_features = check_positive_int(n_features, "n_features")
        check_positive_int(self.refit_cadence, "refit_cadence")
        self.state_ = PolicyState(n_arms, n_features)
        self._rng = np.random.default_rng(getattr(self, "random_state", None))
        self._on_start()
        return self

    def _on_start(self):
        pass

    def _check_started(self):
        if not hasattr(self, "state_"):
            raise StateError("call start() before selecting arms")

    @property
    def n_arms(self) -> int:
        return self.state_.n_arms

    def select_arm(self, x, rng=None) -> int:
        self._check_started()
        rng = as_generator(rng)
        x = check_vector(x, "x", self.state_.n_features)
        if any(m is None for m in self.state_.models):
            return int(rng.integers(self.state_.n_arms))
        scores = self._scores(x, rng)
        return _argmax_random_ties(scores, rng)

    def update(self, x, arm: int, reward: float, rng=None, propensity: float | None = None):
        """Record the reward for ``arm`` at ``x`` and refit when the cadence fires.

        ``propensity`` is the probability with which ``arm`` was chosen, when
        known (warm-start data, selection-time estimates); otherwise it is
        estimated at the next refit by balanced policies.
        """
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
        if st.models[arm] is None or st.t - st.last_refit >= self.refit_cadence:
            self.refit()
        return self

    def warm_start(self, X, arms, rewards, propensities=None):
        """Seed the policy with pre-collected (context, arm, reward) triples, then refit."""
        self._check_started()
        X = np.asarray(X, dtype=float)
        arms = np.asarray(arms, dtype=int)
        rewards = np.asarray(rewards, dtype=float)
        if propensities is None:
            propensities = np.full(len(arms), 1.0 / self.state_.n_arms)
        if not (X.shape[0] == arms.shape[0] == rewards.shape[0] == len(propensities)):
            raise ShapeError("warm-start arrays must have equal length")
        st = self.state_
        for x, a, r, p in zip(X, arms, rewards, propensities):
            x = check_vector(x, "x", st.n_features)
            st.contexts[a].append(x)
            st.rewards[a].append(float(r))
            st.propensities[a].append(float(p))
            st.steps[a].append(st.t)
            st.t += 1
        self.refit()
        return self

    def refit(self):
        st = self.state_
        self._refit()
        st.last_refit = st.t

    def _refit(self):
        raise NotImplementedError

    def _scores(self, x, rng):
        raise NotImplementedError


def _argmax_random_ties(scores, rng) -> int:
    scores = np.asarray(scores, dtype=float)
    best = np.flatnonzero(scores == scores.max())
    if best.size == 1:
        return int(best[0])
    return int(rng.choice(best))


class UniformPolicy(ContextualBandit):
    """Assigns every context uniformly at random."""

    def __init__(self, refit_cadence: int = 10):
        self.refit_cadence = refit_cadence

    def select_arm(self, x, rng=None) -> int:
        self._check_started()
        return int(as_generator(rng).integers(self.state_.n_arms))

    def _refit(self):
        pass


class FixedArmPolicy(ContextualBandit):
    """Always plays the same arm."""

    def __init__(self, arm: int = 0, refit_cadence: int = 10):
        self.arm = arm
        self.refit_cadence = refit_cadence

    def select_arm(self, x, rng=None) -> int:
        self._check_started()
        if not 0 <= self.arm < self.state_.n_arms:
            raise ParameterError(f"arm {self.arm} outside 0..{self.state_.n_arms - 1}")
        return int(self.arm)

    def _refit(self):
        pass


class OraclePolicy(ContextualBandit):
    """Cheating reference that plays the arm an environment reports as optimal.

    The harness hands the environment's noiseless means through
    :meth:`observe_means` before each selection.
    """

    def __init__(self, refit_cadence: int = 10):
        self.refit_cadence = refit_cadence

    def observe_means(self, means) -> None:
        self._means = np.asarray(means, dtype=float)

    def select_arm(self, x, rng=None) -> int:
        self._check_started()
        return int(np.argmax(self._means))

    def _refit(self):
        pass
