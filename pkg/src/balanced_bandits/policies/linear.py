"""Linear Thompson sampling and UCB, with and without inverse-propensity balancing."""

from __future__ import annotations

import json

import numpy as np

from .._validation import check_gamma, check_non_negative, check_positive_int
from ..exceptions import ParameterError, StateError
from ..propensity import (
    ModelSnapshot,
    MultinomialLogit,
    SnapshotStore,
    clip_to_weight,
    ts_propensities_mc,
)
from ..ridge import FittedArmModel, cross_validate_lambda, fit_weighted_ridge
from .base import ContextualBandit, PolicyState

KINDS = ("LinTS", "LinUCB", "BLTS", "BLUCB")
STATE_SCHEMA = "balanced-bandits/linear-policy-state"
STATE_VERSION = 1

DEFAULT_LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


class LinearBandit(ContextualBandit):
    """Per-arm weighted ridge models driving a Thompson or UCB assignment rule.

    Parameters
    ----------
    kind : {"LinTS", "LinUCB", "BLTS", "BLUCB"}
        ``B*`` variants weight each observation by ``1/max(gamma, p)`` where
        ``p`` is its assignment probability: Monte-Carlo over stored
        posterior snapshots for BLTS, a multinomial logistic fit for BLUCB.
    alpha : float
        Exploration multiplier on the posterior standard deviation.
    gamma : float
        Propensity clipping threshold in (0, 1]; 1 disables balancing.
    lambda_grid : sequence of float
        Ridge penalties chosen per arm by 5-fold CV at every refit.
    refit_cadence : int
        Steps between model refits.
    n_mc_draws : int
        Monte-Carlo iterations per BLTS propensity estimate.
    logit_l2 : float
        L2 penalty of the BLUCB propensity model.
    random_state : int or None
        Seed of the internal stream used for propensity Monte-Carlo, kept
        separate from the selection stream so balanced and unbalanced runs
        stay aligned.
    """

    def __init__(self, kind: str = "BLTS", alpha: float = 1.0, gamma: float = 0.1,
                 lambda_grid=DEFAULT_LAMBDA_GRID, refit_cadence: int = 10,
                 n_mc_draws: int = 1000, logit_l2: float = 1.0, random_state=None):
        self.kind = kind
        self.alpha = alpha
        self.gamma = gamma
        self.lambda_grid = lambda_grid
        self.refit_cadence = refit_cadence
        self.n_mc_draws = n_mc_draws
        self.logit_l2 = logit_l2
        self.random_state = random_state

    @property
    def is_thompson(self) -> bool:
        return self.kind in ("LinTS", "BLTS")

    @property
    def is_balanced(self) -> bool:
        return self.kind in ("BLTS", "BLUCB") and self.gamma < 1

    def _on_start(self):
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        check_non_negative(self.alpha, "alpha")
        check_gamma(self.gamma, allow_one=True)
        grid = np.asarray(self.lambda_grid, dtype=float)
        if grid.size == 0 or np.any(grid <= 0):
            raise ParameterError("lambda_grid must be non-empty and positive")
        check_positive_int(self.n_mc_draws, "n_mc_draws")
        self.snapshots_ = SnapshotStore()
        self.snapshots_.append(ModelSnapshot((None,) * self.state_.n_arms, -1))
        self._logit = None

    def _scores(self, x, rng):
        models = self.state_.models
        if self.is_thompson:
            d = x.shape[0]
            scores = np.empty(len(models))
            for a, m in enumerate(models):
                z = rng.standard_normal(d)
                theta = m.theta_hat + self.alpha * (m.covariance_factor @ z)
                scores[a] = x @ theta
            return scores
        return np.array([
            x @ m.theta_hat + self.alpha * np.sqrt(max(x @ m.covariance @ x, 0.0))
            for m in models
        ])

    def predict_means(self, X) -> np.ndarray:
        """Posterior-mean rewards, one column per arm (NaN for unfitted arms)."""
        X = np.asarray(X, dtype=float)
        return np.column_stack([
            np.full(X.shape[0], np.nan) if m is None else X @ m.theta_hat
            for m in self.state_.models
        ])

    def _balancing_weights(self):
        st = self.state_
        K = st.n_arms
        if not self.is_balanced:
            return [np.ones(st.n_obs(a)) for a in range(K)]
        if self.is_thompson:
            self._fill_ts_propensities()
            props = [np.asarray(st.propensities[a], dtype=float) for a in range(K)]
        else:
            props = self._ucb_propensities()
        return [clip_to_weight(p, self.gamma) for p in props]

    def _fill_ts_propensities(self):
        """Estimate, once per observation, the probability its arm was chosen."""
        st = self.state_
        pending = []
        for a in range(st.n_arms):
            p = np.asarray(st.propensities[a], dtype=float)
            for i in np.flatnonzero(np.isnan(p)):
                pending.append((a, i))
        if not pending:
            return
        X = np.array([st.contexts[a][i] for a, i in pending])
        probs = ts_propensities_mc(self.snapshots_, X, self.alpha, self.n_mc_draws, self._rng)
        for (a, i), row in zip(pending, probs):
            st.propensities[a][i] = float(row[a])

    def _ucb_propensities(self):
        st = self.state_
        X, arms, order = st.all_history()
        logit = MultinomialLogit(l2=self.logit_l2, n_classes=st.n_arms, warm_start=True)
        if self._logit is not None:
            logit.coef_full_ = self._logit.coef_full_
        self._logit = logit.fit(X, arms)
        P = self._logit.predict_proba(X)
        p_chosen = np.empty(len(arms))
        p_chosen[order] = P[np.arange(len(arms)), arms]
        props, start = [], 0
        for a in range(st.n_arms):
            n = st.n_obs(a)
            props.append(p_chosen[start:start + n])
            start += n
        for a in range(st.n_arms):
            st.propensities[a] = list(props[a])
        return props

    def _refit(self):
        st = self.state_
        weights = self._balancing_weights()
        for a in range(st.n_arms):
            st.weights[a] = weights[a]
            if st.n_obs(a) == 0:
                continue
            hist = st.history(a)
            lam = cross_validate_lambda(hist.contexts, hist.rewards, hist.weights, self.lambda_grid)
            st.models[a] = fit_weighted_ridge(hist, lam, st.n_features)
        if self.is_thompson and self.is_balanced:
            self.snapshots_.append(ModelSnapshot(tuple(st.models), st.t))

    # checkpointing

    def to_json(self) -> str:
        """Serialize the full policy state as a versioned JSON document."""
        self._check_started()
        st = self.state_
        doc = {
            "schema": STATE_SCHEMA,
            "version": STATE_VERSION,
            "params": {k: (list(v) if isinstance(v, (tuple, np.ndarray)) else v)
                       for k, v in self.get_params().items()},
            "n_arms": st.n_arms,
            "n_features": st.n_features,
            "t": st.t,
            "last_refit": st.last_refit,
            "arms": [
                {
                    "contexts": np.asarray(st.contexts[a]).reshape(-1, st.n_features).tolist(),
                    "rewards": list(st.rewards[a]),
                    "propensities": [None if np.isnan(p) else p for p in st.propensities[a]],
                    "steps": list(st.steps[a]),
                    "weights": st.weights[a].tolist(),
                    "model": None if st.models[a] is None else st.models[a].to_dict(),
                }
                for a in range(st.n_arms)
            ],
            "snapshots": [
                {"time": s.snapshot_time,
                 "models": [None if m is None else m.to_dict() for m in s.models]}
                for s in self.snapshots_.snapshots
            ],
            "logit_coef": None if self._logit is None else self._logit.coef_full_.tolist(),
            "rng_state": self._rng.bit_generator.state,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "LinearBandit":
        doc = json.loads(text)
        if doc.get("schema") != STATE_SCHEMA:
            raise StateError(f"not a linear policy state document: {doc.get('schema')!r}")
        if doc.get("version") != STATE_VERSION:
            raise StateError(f"unsupported state version {doc.get('version')!r}")
        params = doc["params"]
        params["lambda_grid"] = tuple(params["lambda_grid"])
        policy = cls(**params).start(doc["n_arms"], doc["n_features"])
        st = PolicyState(doc["n_arms"], doc["n_features"], t=doc["t"], last_refit=doc["last_refit"])
        for a, arm in enumerate(doc["arms"]):
            st.contexts[a] = [np.asarray(x, dtype=float) for x in arm["contexts"]]
            st.rewards[a] = [float(r) for r in arm["rewards"]]
            st.propensities[a] = [np.nan if p is None else float(p) for p in arm["propensities"]]
            st.steps[a] = [int(s) for s in arm["steps"]]
            st.weights[a] = np.asarray(arm["weights"], dtype=float)
            st.models[a] = None if arm["model"] is None else FittedArmModel.from_dict(arm["model"])
        policy.state_ = st
        policy.snapshots_ = SnapshotStore()
        for snap in doc["snapshots"]:
            models = tuple(None if m is None else FittedArmModel.from_dict(m) for m in snap["models"])
            policy.snapshots_.append(ModelSnapshot(models, snap["time"]))
        if doc["logit_coef"] is not None:
            policy._logit = MultinomialLogit(l2=policy.logit_l2, n_classes=st.n_arms)
            policy._logit.coef_full_ = np.asarray(doc["logit_coef"], dtype=float)
        policy._rng.bit_generator.state = doc["rng_state"]
        return policy
