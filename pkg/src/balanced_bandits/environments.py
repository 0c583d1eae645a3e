"""Reward-generating environments with hidden potential outcomes."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import check_positive, check_positive_int, check_vector
from .exceptions import ConfigError, StateError

logger = logging.getLogger(__name__)


MAX_CATEGORIES = 100


def truncated_normal(low: float, high: float, size, rng: np.random.Generator) -> np.ndarray:
    """Standard normal draws restricted to ``(low, high)`` by rejection."""
    size = (size,) if np.isscalar(size) else tuple(size)
    n = int(np.prod(size))
    out = np.empty(0)
    while out.size < n:
        draw = rng.standard_normal(max(4 * (n - out.size), 16))
        out = np.concatenate([out, draw[(draw > low) & (draw < high)]])
    return out[:n].reshape(size)


class Environment:
    """Base environment.

    ``draw(rng)`` returns ``(context, mean_rewards, realized_rewards)`` where
    the realized rewards add independent noise per arm. Contexts from
    :meth:`sample_contexts` follow the post-warm-start distribution.
    """

    n_arms: int
    n_features: int
    noise_sd: float = 0.0

    def mean_rewards(self, x) -> np.ndarray:
        raise NotImplementedError

    def sample_contexts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.n_features))

    def reset(self, rng: np.random.Generator) -> None:
        pass

    def draw(self, rng: np.random.Generator):
        x = self.sample_contexts(1, rng)[0]
        means = self.mean_rewards(x)
        noise = self.noise_sd * rng.standard_normal(self.n_arms)
        return x, means, means + noise

    def rewards(self, x, rng: np.random.Generator) -> np.ndarray:
        x = check_vector(x, "x", self.n_features)
        return self.mean_rewards(x) + self.noise_sd * rng.standard_normal(self.n_arms)

    def optimal_arm(self, x) -> int:
        return int(np.argmax(self.mean_rewards(x)))

    def warm_start(self, rng: np.random.Generator):
        """Pre-collected ``(X, arms, rewards)``; empty for environments without one."""
        return np.empty((0, self.n_features)), np.empty(0, dtype=int), np.empty(0)

    def projected_coefficients(self, features, n_samples: int = 200_000, seed: int = 0) -> np.ndarray:
        """Population least-squares projection of each arm's mean reward onto ``features``.

        Returns a ``(n_arms, n_features_out)`` matrix estimated on a fixed
        large sample of contexts. Its argmax rule is the best assignment a
        correctly balanced linear model on those features can converge to.
        """
        rng = np.random.default_rng(seed)
        X = self.sample_contexts(n_samples, rng)
        M = np.array([self.mean_rewards(x) for x in X]) if not hasattr(self, "mean_rewards_batch") \
            else self.mean_rewards_batch(X)
        Phi = features.transform(X)
        coef, *_ = np.linalg.lstsq(Phi, M, rcond=None)
        return coef.T


class QuadraticEnv(Environment):
    """Three arms with quadratic mean rewards and a warm start from a small corner.

    Arm means are ``s``, ``1`` and ``2 - s`` with
    ``s = 0.5 (x0 + 1)^2 + 0.5 (x1 + 1)^2``. Warm-start contexts are truncated
    standard normals on ``(-1.15, -0.85)`` per coordinate, assigned to arms
    uniformly at random.
    """

    n_arms = 3
    n_features = 2

    def __init__(self, noise_sd: float = 0.1, warm_start_count: int = 50,
                 warm_start_interval=(-1.15, -0.85)):
        self.noise_sd = float(noise_sd)
        self.warm_start_count = int(warm_start_count)
        self.warm_start_interval = tuple(warm_start_interval)

    def mean_rewards_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        s = 0.5 * (X[:, 0] + 1) ** 2 + 0.5 * (X[:, 1] + 1) ** 2
        return np.column_stack([s, np.ones_like(s), 2 - s])

    def mean_rewards(self, x) -> np.ndarray:
        return self.mean_rewards_batch(np.asarray(x, dtype=float)[None, :])[0]

    def warm_start(self, rng):
        low, high = self.warm_start_interval
        n = self.warm_start_count
        X = truncated_normal(low, high, (n, 2), rng)
        arms = rng.integers(self.n_arms, size=n)
        means = self.mean_rewards_batch(X)
        rewards = means[np.arange(n), arms] + self.noise_sd * rng.standard_normal(n)
        return X, arms, rewards


class SparseLinearEnv(Environment):
    """Linear arms driven by two signal coordinates plus a common nuisance shift.

    Means are ``x0 + f``, ``1 - x0 + f`` and ``x1 + f`` with
    ``f = 2 * noise_sd * sum(x[2 : q + 2])``; the remaining ``d - q - 2``
    coordinates are pure noise.
    """

    n_arms = 3

    def __init__(self, n_features: int = 102, n_nuisance: int = 51, noise_sd: float = 0.5):
        self.n_features = check_positive_int(n_features, "n_features")
        self.n_nuisance = int(n_nuisance)
        self.noise_sd = check_positive(noise_sd, "noise_sd")
        if not 0 <= self.n_nuisance <= self.n_features - 2:
            raise ConfigError("n_nuisance must lie in [0, n_features - 2]")

    def shift(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return 2 * self.noise_sd * X[:, 2:self.n_nuisance + 2].sum(axis=1)

    def mean_rewards_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        f = self.shift(X)
        return np.column_stack([X[:, 0] + f, 1 - X[:, 0] + f, X[:, 1] + f])

    def mean_rewards(self, x) -> np.ndarray:
        return self.mean_rewards_batch(x)[0]


class NonlinearEnv(Environment):
    """Two linear arms and one piecewise arm whose optimum depends on the quadrant.

    The optimal arm is 2 in quadrants I and II, 1 in quadrant III and 0 in
    quadrant IV of the ``(x0, x1)`` plane.
    """

    n_arms = 3

    def __init__(self, n_features: int = 10, noise_sd: float = 0.1):
        self.n_features = check_positive_int(n_features, "n_features")
        if self.n_features < 2:
            raise ConfigError("NonlinearEnv needs at least two context coordinates")
        self.noise_sd = float(noise_sd)

    def mean_rewards_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        x0, x1 = X[:, 0], X[:, 1]
        r2 = (x1 < 0) * (np.minimum(x0, -x0) - 1) + (x1 > 0) * (np.maximum(x0, -x0) + 1)
        return np.column_stack([x0, -x0, r2])

    def mean_rewards(self, x) -> np.ndarray:
        return self.mean_rewards_batch(x)[0]


class ClassificationEnv(Environment):
    """Multiclass data served as a bandit: reward 1 iff the chosen arm is the row's class.

    Rows are shuffled once per :meth:`reset` and each is served exactly once.
    """

    noise_sd = 0.0

    def __init__(self, X, labels, n_arms: int | None = None):
        self.X = np.asarray(X, dtype=float)
        labels = np.asarray(labels)
        self.classes_, self.y = np.unique(labels, return_inverse=True)
        self.n_arms = int(n_arms) if n_arms is not None else len(self.classes_)
        self.n_features = self.X.shape[1]
        if self.X.shape[0] != self.y.shape[0]:
            raise ConfigError("feature matrix and labels differ in length")
        self._order = np.arange(self.X.shape[0])
        self._pos = 0

    def __len__(self) -> int:
        return self.X.shape[0]

    def reset(self, rng):
        self._order = rng.permutation(self.X.shape[0])
        self._pos = 0

    def draw(self, rng=None):
        if self._pos >= len(self._order):
            raise StateError("every row of the dataset has already been served")
        i = self._order[self._pos]
        self._pos += 1
        means = np.zeros(self.n_arms)
        means[self.y[i]] = 1.0
        return self.X[i], means, means.copy()

    def sample_contexts(self, n, rng):
        return self.X[rng.integers(self.X.shape[0], size=n)]

    def mean_rewards(self, x):
        raise StateError("classification rewards are defined per row, not per context")


def load_classification_csv(path, label: str = "label", standardize: bool = True):
    """Read a delimited dataset with a header row into ``(X, labels)``.

    Non-numeric feature columns are one-hot encoded and rows with missing
    values are dropped (the count is logged). A non-numeric column with more
    than ``MAX_CATEGORIES`` distinct values is rejected; it is almost always
    an identifier or a numeric column that failed to parse.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, encoding="utf-8")
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if label not in df.columns:
        raise ConfigError(f"dataset {path} has no label column {label!r}")
    n_before = len(df)
    df = df.dropna()
    if len(df) < n_before:
        logger.warning("dropped %d rows with missing values from %s", n_before - len(df), path)
    if len(df) == 0:
        raise ConfigError(f"dataset {path} has no complete rows")
    labels = df.pop(label).to_numpy()
    categorical = [c for c in df.columns if not pd.api.types.is_numeric_dtype(df[c])]
    for c in categorical:
        n_levels = df[c].nunique()
        if n_levels > MAX_CATEGORIES:
            raise ConfigError(f"column {c!r} of {path} is non-numeric with {n_levels} distinct values")
    if categorical:
        df = pd.get_dummies(df, columns=categorical, dtype=float)
    X = df.to_numpy(dtype=float)
    if standardize and X.shape[0] > 1:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return X, labels
