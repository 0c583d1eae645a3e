"""Feature maps applied to raw contexts before they reach a policy's outcome model."""

from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_matrix
from .exceptions import ConfigError

FEATURE_MAPS = ("identity", "linear", "quadratic", "poly2")


class ContextFeatures(TransformerMixin, BaseEstimator):
    """Stateless context expansion.

    ``identity`` passes contexts through, ``linear`` prepends an intercept,
    ``quadratic`` adds per-coordinate squares to ``linear`` and ``poly2``
    adds every degree-two monomial (squares and pairwise products).
    """

    def __init__(self, kind: str = "linear"):
        self.kind = kind

    def fit(self, X=None, y=None):
        if self.kind not in FEATURE_MAPS:
            raise ConfigError(f"unknown feature map {self.kind!r}; choose from {FEATURE_MAPS}")
        return self

    def transform(self, X):
        X = check_matrix(X)
        if self.kind == "identity":
            return X
        ones = np.ones((X.shape[0], 1))
        if self.kind == "linear":
            return np.hstack([ones, X])
        if self.kind == "quadratic":
            return np.hstack([ones, X, X**2])
        if self.kind == "poly2":
            pairs = list(combinations_with_replacement(range(X.shape[1]), 2))
            i, j = np.array(pairs).T
            return np.hstack([ones, X, X[:, i] * X[:, j]])
        raise ConfigError(f"unknown feature map {self.kind!r}; choose from {FEATURE_MAPS}")

    def transform_one(self, x) -> np.ndarray:
        return self.transform(np.asarray(x, dtype=float)[None, :])[0]

    def n_output_features(self, n_inputs: int) -> int:
        return self.transform(np.zeros((1, n_inputs))).shape[1]
