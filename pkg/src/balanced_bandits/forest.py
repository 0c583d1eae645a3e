"""Honest regression forests and a Thompson sampling policy built on them.

Each tree is grown on one half of a subsample and its leaf values are
averages of the other half, so no response used for estimation has
influenced where the splits are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import (
    check_gamma,
    check_matrix,
    check_non_negative,
    check_positive_int,
    check_xy,
)
from .exceptions import ParameterError, ShapeError, StateError
from .policies.base import ContextualBandit
from .propensity import clip_to_weight
from .ridge import ArmHistory

IPW_MODES = ("replication", "feature")


@njit(cache=True)
def _best_split(X, y, idx, start, end, feat, min_leaf):
    """Best variance-reduction threshold of one feature on ``idx[start:end]``."""
    n = end - start
    vals = np.empty(n)
    ys = np.empty(n)
    for i in range(n):
        vals[i] = X[idx[start + i], feat]
        ys[i] = y[idx[start + i]]
    order = np.argsort(vals, kind="mergesort")
    total = 0.0
    for i in range(n):
        total += ys[i]
    best_score = -np.inf
    best_thr = 0.0
    left = 0.0
    for k in range(n - 1):
        left += ys[order[k]]
        n_left = k + 1
        n_right = n - n_left
        if n_left < min_leaf or n_right < min_leaf:
            continue
        lo = vals[order[k]]
        hi = vals[order[k + 1]]
        if hi <= lo:
            continue
        right = total - left
        score = left * left / n_left + right * right / n_right
        if score > best_score:
            best_score = score
            best_thr = 0.5 * (lo + hi)
            if best_thr >= hi:
                best_thr = lo
    return best_score, best_thr


@njit(cache=True)
def _grow_tree(X, y, mtry, min_leaf, max_depth, seed):
    """CART growth with a random feature subset per node, drawn among non-constant features."""
    np.random.seed(seed)
    n, d = X.shape
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    parent = np.full(cap, -1, dtype=np.int64)
    seg_start = np.zeros(cap, dtype=np.int64)
    seg_end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    idx = np.arange(n)
    seg_end[0] = n
    n_nodes = 1
    stack = [0]
    candidates = np.empty(d, dtype=np.int64)
    while len(stack) > 0:
        node = stack.pop()
        s = seg_start[node]
        e = seg_end[node]
        if e - s < 2 * min_leaf or (max_depth >= 0 and depth[node] >= max_depth):
            continue
        n_cand = 0
        for j in range(d):
            lo = X[idx[s], j]
            hi = lo
            for i in range(s + 1, e):
                v = X[idx[i], j]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            if hi > lo:
                candidates[n_cand] = j
                n_cand += 1
        if n_cand == 0:
            continue
        k = min(mtry, n_cand)
        # partial Fisher-Yates draw of k candidate features
        for i in range(k):
            r = i + np.random.randint(n_cand - i)
            tmp = candidates[i]
            candidates[i] = candidates[r]
            candidates[r] = tmp
        best_score = -np.inf
        best_feat = -1
        best_thr = 0.0
        for i in range(k):
            score, thr = _best_split(X, y, idx, s, e, candidates[i], min_leaf)
            if score > best_score:
                best_score = score
                best_feat = candidates[i]
                best_thr = thr
        if best_feat < 0:
            continue
        # stable partition of the segment
        buf = np.empty(e - s, dtype=np.int64)
        nl = 0
        for i in range(s, e):
            if X[idx[i], best_feat] <= best_thr:
                buf[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if X[idx[i], best_feat] > best_thr:
                buf[nr] = idx[i]
                nr += 1
        for i in range(e - s):
            idx[s + i] = buf[i]
        feature[node] = best_feat
        threshold[node] = best_thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        for c, cs, ce in ((lc, s, s + nl), (rc, s + nl, e)):
            parent[c] = node
            seg_start[c] = cs
            seg_end[c] = ce
            depth[c] = depth[node] + 1
        stack.append(rc)
        stack.append(lc)
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), parent[:n_nodes].copy())


@njit(cache=True)
def _leaf_of(feature, threshold, left, right, root, x):
    node = root
    while left[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True)
def _honest_values(feature, threshold, left, right, parent, X_est, y_est, min_leaf):
    """Node means of the estimation half; nodes with fewer than ``min_leaf`` inherit the parent's."""
    m = feature.shape[0]
    count = np.zeros(m)
    total = np.zeros(m)
    for i in range(X_est.shape[0]):
        node = 0
        while True:
            count[node] += 1.0
            total[node] += y_est[i]
            if left[node] < 0:
                break
            if X_est[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
    value = np.zeros(m)
    # children are always created after their parent, so one forward pass suffices
    for node in range(m):
        if parent[node] < 0:
            value[node] = total[node] / count[node] if count[node] > 0 else 0.0
        elif count[node] >= min_leaf:
            value[node] = total[node] / count[node]
        else:
            value[node] = value[parent[node]]
    return value, count


@njit(cache=True)
def _forest_tree_predictions(feature, threshold, left, right, value, roots, X):
    n = X.shape[0]
    m = roots.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for t in range(m):
            node = _leaf_of(feature, threshold, left, right, roots[t], X[i])
            out[i, t] = value[node]
    return out


@dataclass(frozen=True)
class HonestTree:
    """Axis-aligned splits from the split half, node values from the estimation half.

    Node ``i`` is internal when ``left[i] >= 0``; a context goes left when
    ``x[feature[i]] <= threshold[i]``. ``value[i]`` is the estimation-half
    mean of the node, or its parent's value when it holds fewer than
    ``min_leaf`` estimation observations.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    parent: np.ndarray
    value: np.ndarray
    est_count: np.ndarray
    min_leaf: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([_leaf_of(self.feature, self.threshold, self.left, self.right, 0, x) for x in X])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def same_structure(self, other: "HonestTree") -> bool:
        return (np.array_equal(self.feature, other.feature)
                and np.array_equal(self.threshold, other.threshold)
                and np.array_equal(self.left, other.left)
                and np.array_equal(self.right, other.right))


def grow_honest_tree(X, y, split_idx, est_idx, min_leaf: int = 5, max_depth=None,
                     feature_subset_size=None, seed: int = 0) -> HonestTree:
    """Grow one tree on ``split_idx`` rows and estimate its node values on ``est_idx`` rows."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    split_idx = np.asarray(split_idx, dtype=int)
    est_idx = np.asarray(est_idx, dtype=int)
    if np.intersect1d(split_idx, est_idx).size:
        raise ParameterError("split and estimation halves must be disjoint")
    if est_idx.size == 0 or split_idx.size == 0:
        raise StateError("both halves of an honest tree need observations")
    d = X.shape[1]
    mtry = int(np.ceil(np.sqrt(d))) if feature_subset_size is None else int(feature_subset_size)
    depth = -1 if max_depth is None else int(max_depth)
    feature, threshold, left, right, parent = _grow_tree(
        X[split_idx], y[split_idx], mtry, int(min_leaf), depth, int(seed)
    )
    value, count = _honest_values(feature, threshold, left, right, parent,
                                  X[est_idx], y[est_idx], int(min_leaf))
    return HonestTree(feature, threshold, left, right, parent, value, count, int(min_leaf))


@dataclass(frozen=True)
class ForestModel:
    """A fitted honest forest stored as concatenated node arrays for fast traversal."""

    trees: tuple
    subsample_rate: float
    feature_subset_size: int
    var_floor: float = 0.0

    def __post_init__(self):
        if len(self.trees) < 2:
            raise ParameterError("a forest needs at least two trees")
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        shift = lambda a, o: np.where(a >= 0, a + o, -1)  # noqa: E731
        object.__setattr__(self, "_roots", offsets[:-1].astype(np.int64))
        object.__setattr__(self, "_feature", np.concatenate([t.feature for t in self.trees]))
        object.__setattr__(self, "_threshold", np.concatenate([t.threshold for t in self.trees]))
        object.__setattr__(self, "_left", np.concatenate(
            [shift(t.left, o) for t, o in zip(self.trees, offsets)]).astype(np.int64))
        object.__setattr__(self, "_right", np.concatenate(
            [shift(t.right, o) for t, o in zip(self.trees, offsets)]).astype(np.int64))
        object.__setattr__(self, "_value", np.concatenate([t.value for t in self.trees]))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree predictions with shape ``(n_contexts, n_trees)``."""
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        return _forest_tree_predictions(self._feature, self._threshold, self._left, self._right,
                                        self._value, self._roots, X)


def fit_honest_forest(history: ArmHistory, m: int = 200, subsample_rate: float = 0.5,
                      min_leaf: int = 5, max_depth=None, rng=None, feature_subset_size=None,
                      var_floor: float = 0.0) -> ForestModel:
    """Fit ``m`` honest trees, each on a subsample drawn without replacement and split 50/50.

    The history's weights are ignored; balancing enters through
    :func:`apply_ipw_replication` or :func:`apply_propensity_feature`.
    """
    m = check_positive_int(m, "m")
    min_leaf = check_positive_int(min_leaf, "min_leaf")
    if not 0 < subsample_rate <= 1:
        raise ParameterError("subsample_rate must lie in (0, 1]")
    n = len(history)
    if n < 2 * min_leaf:
        raise StateError(f"need at least {2 * min_leaf} observations, got {n}")
    rng = np.random.default_rng(rng)
    X, y = history.contexts, history.rewards
    d = X.shape[1]
    mtry = int(np.ceil(np.sqrt(d))) if feature_subset_size is None else int(feature_subset_size)
    size = max(2, int(round(subsample_rate * n)))
    trees = []
    for _ in range(m):
        sub = rng.choice(n, size=size, replace=False)
        half = size // 2
        seed = int(rng.integers(2**31 - 1))
        trees.append(grow_honest_tree(X, y, sub[:half], sub[half:], min_leaf, max_depth, mtry, seed))
    return ForestModel(tuple(trees), float(subsample_rate), mtry, float(var_floor))


def forest_predict(model: ForestModel, x) -> tuple[float, float]:
    """Mean of the per-tree predictions and their between-tree variance, floored at ``var_floor``."""
    preds = model.tree_predictions(np.asarray(x, dtype=float).reshape(1, -1))[0]
    return float(preds.mean()), float(max(preds.var(ddof=1), model.var_floor))


def apply_ipw_replication(history: ArmHistory, weights) -> ArmHistory:
    """Repeat each observation ``round(w)`` times (half-integers round to even)."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(history),):
        raise ShapeError(f"expected {len(history)} weights, got shape {w.shape}")
    reps = np.rint(w).astype(int)
    if np.any(reps < 1):
        raise ParameterError("weights must be at least 1 (clipped inverse propensities)")
    X = np.repeat(history.contexts, reps, axis=0)
    r = np.repeat(history.rewards, reps)
    return ArmHistory(X, r, np.ones(r.shape[0]), history.arm_id)


def apply_propensity_feature(history: ArmHistory, propensities) -> ArmHistory:
    """Append each observation's assignment probability as a final context column."""
    p = np.asarray(propensities, dtype=float)
    if p.shape != (len(history),):
        raise ShapeError(f"expected {len(history)} propensities, got shape {p.shape}")
    if np.any((p < 0) | (p > 1)):
        raise ParameterError("propensities must lie in [0, 1]")
    X = np.column_stack([history.contexts, p])
    return ArmHistory(X, history.rewards, history.weights, history.arm_id)


class HonestForest(RegressorMixin, BaseEstimator):
    """Scikit-learn style honest regression forest.

    ``predict(X, return_var=True)`` also returns the between-tree variance,
    a simpler dispersion estimate than the little-bags variance of full
    generalized random forests.
    """

    def __init__(self, n_trees: int = 200, subsample_rate: float = 0.5, min_leaf: int = 5,
                 max_depth=None, feature_subset_size=None, var_floor: float = 0.0,
                 random_state=None):
        self.n_trees = n_trees
        self.subsample_rate = subsample_rate
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.feature_subset_size = feature_subset_size
        self.var_floor = var_floor
        self.random_state = random_state

    def fit(self, X, y):
        X, y, _ = check_xy(X, y)
        self.model_ = fit_honest_forest(
            ArmHistory.unweighted(X, y), self.n_trees, self.subsample_rate, self.min_leaf,
            self.max_depth, np.random.default_rng(self.random_state), self.feature_subset_size,
            self.var_floor,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_var: bool = False):
        X = check_matrix(X, n_features=self.n_features_in_)
        preds = self.model_.tree_predictions(X)
        mu = preds.mean(axis=1)
        if not return_var:
            return mu
        return mu, np.maximum(preds.var(axis=1, ddof=1), self.var_floor)


class ForestTS(ContextualBandit):
    """Thompson sampling on per-arm honest forests: ``mu_a ~ N(mean, alpha^2 var)``.

    Arms are assigned uniformly until every arm holds ``2 * min_leaf``
    observations.

    Parameters
    ----------
    n_trees, subsample_rate, min_leaf, max_depth, feature_subset_size
        Forest settings, see :func:`fit_honest_forest`.
    var_floor : float
        Lower bound on the between-tree variance.
    alpha : float
        Spread multiplier of the Thompson draw.
    gamma : float
        Propensity clipping threshold; 1 disables balancing.
    ipw : {"replication", "feature"}
        How balancing enters the forest when ``gamma < 1``: repeat each
        observation ``round(1/max(gamma, p))`` times, or append ``p`` as a
        feature. With ``feature``, predictions use the arm's mean historical
        propensity in that column.
    n_mc_draws : int
        Draws for the selection-time propensity of the chosen arm.
    """

    def __init__(self, n_trees: int = 200, subsample_rate: float = 0.5, min_leaf: int = 5,
                 max_depth=None, feature_subset_size=None, var_floor: float = 1e-6,
                 alpha: float = 1.0, gamma: float = 1.0, ipw: str = "replication",
                 refit_cadence: int = 10, n_mc_draws: int = 1000, random_state=None):
        self.n_trees = n_trees
        self.subsample_rate = subsample_rate
        self.min_leaf = min_leaf
        self.max_depth = max_depth
        self.feature_subset_size = feature_subset_size
        self.var_floor = var_floor
        self.alpha = alpha
        self.gamma = gamma
        self.ipw = ipw
        self.refit_cadence = refit_cadence
        self.n_mc_draws = n_mc_draws
        self.random_state = random_state

    @property
    def is_balanced(self) -> bool:
        return self.gamma < 1

    def _on_start(self):
        if self.ipw not in IPW_MODES:
            raise ParameterError(f"ipw must be one of {IPW_MODES}, got {self.ipw!r}")
        check_gamma(self.gamma, allow_one=True)
        check_non_negative(self.alpha, "alpha")
        check_non_negative(self.var_floor, "var_floor")
        self._pending = None
        self._prop_column = np.full(self.state_.n_arms, np.nan)

    def _design(self, arm, X):
        X = np.atleast_2d(X)
        if self.is_balanced and self.ipw == "feature":
            return np.column_stack([X, np.full(X.shape[0], self._prop_column[arm])])
        return X

    def _moments(self, x):
        mu = np.empty(self.state_.n_arms)
        s2 = np.empty(self.state_.n_arms)
        for a, model in enumerate(self.state_.models):
            preds = model.tree_predictions(self._design(a, x))[0]
            mu[a] = preds.mean()
            s2[a] = max(preds.var(ddof=1), self.var_floor)
        return mu, s2

    def _scores(self, x, rng):
        mu, s2 = self._moments(x)
        return mu + self.alpha * np.sqrt(s2) * rng.standard_normal(mu.shape[0])

    def selection_probabilities(self, x) -> np.ndarray:
        K = self.state_.n_arms
        if any(m is None for m in self.state_.models):
            return np.full(K, 1.0 / K)
        mu, s2 = self._moments(np.asarray(x, dtype=float))
        draws = mu + self.alpha * np.sqrt(s2) * self._rng.standard_normal((self.n_mc_draws, K))
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
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([
            np.full(X.shape[0], np.nan) if m is None else m.tree_predictions(self._design(a, X)).mean(axis=1)
            for a, m in enumerate(self.state_.models)
        ])

    def _refit(self):
        st = self.state_
        for a in range(st.n_arms):
            if st.n_obs(a) < 2 * self.min_leaf:
                continue
            X, r = st.arm_arrays(a)
            hist = ArmHistory.unweighted(X, r, a)
            if self.is_balanced:
                p = np.asarray(st.propensities[a], dtype=float)
                # observations without a recorded propensity are treated as uniform draws
                p = np.where(np.isnan(p), 1.0 / st.n_arms, p)
                if self.ipw == "replication":
                    st.weights[a] = clip_to_weight(p, self.gamma)
                    hist = apply_ipw_replication(hist, st.weights[a])
                else:
                    self._prop_column[a] = float(p.mean())
                    hist = apply_propensity_feature(hist, p)
            st.models[a] = fit_honest_forest(
                hist, self.n_trees, self.subsample_rate, self.min_leaf, self.max_depth,
                self._rng, self.feature_subset_size, self.var_floor,
            )
