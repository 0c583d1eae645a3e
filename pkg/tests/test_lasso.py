import numpy as np
import pytest
from scipy.stats import ortho_group

from balanced_bandits.exceptions import ParameterError
from balanced_bandits.lasso import (
    WeightedLasso,
    cross_validate_lasso,
    kkt_violation,
    lambda_max,
    lasso_coordinate_descent,
    soft_threshold,
)


def weighted_instance(rng, n, p, sparsity=3):
    X = rng.standard_normal((n, p))
    theta = np.zeros(p)
    theta[:sparsity] = rng.uniform(1, 3, sparsity) * rng.choice([-1, 1], sparsity)
    r = X @ theta + 0.5 * rng.standard_normal(n)
    w = rng.uniform(1, 10, n)
    return X, r, w


def test_zero_penalty_equals_weighted_least_squares():
    rng = np.random.default_rng(0)
    X, r, w = weighted_instance(rng, 80, 6)
    theta, converged = lasso_coordinate_descent(X, r, w, 0.0, tol=1e-10)
    oracle = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * r))
    assert converged
    np.testing.assert_allclose(theta, oracle, atol=1e-8)


@pytest.mark.parametrize("lam", [0.05, 0.3, 1.0])
def test_orthonormal_design_is_soft_thresholding(lam):
    Q = ortho_group.rvs(8, random_state=1)[:, :5]
    r = np.random.default_rng(2).standard_normal(8)
    theta, _ = lasso_coordinate_descent(Q, r, None, lam, tol=1e-12)
    z = Q.T @ r
    expected = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    np.testing.assert_allclose(theta, expected, atol=1e-8)
    np.testing.assert_allclose(soft_threshold(z, lam), expected)


def test_penalty_above_lambda_max_zeroes_everything():
    rng = np.random.default_rng(3)
    X, r, w = weighted_instance(rng, 50, 7)
    lam = np.max(np.abs(X.T @ (w * r)))
    assert lambda_max(X, r, w) == pytest.approx(lam)
    theta, converged = lasso_coordinate_descent(X, r, w, lam)
    assert converged
    np.testing.assert_array_equal(theta, np.zeros(7))


@pytest.mark.parametrize("seed", range(10))
def test_kkt_certificate_on_random_weighted_problems(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(10, 120), rng.integers(2, 30)
    X, r, w = weighted_instance(rng, n, p, sparsity=min(3, p))
    lam = rng.uniform(0.01, 0.5) * lambda_max(X, r, w)
    theta, converged = lasso_coordinate_descent(X, r, w, lam)
    assert converged
    assert kkt_violation(X, r, w, lam, theta) <= 1e-6


def test_unpenalized_column_is_free():
    rng = np.random.default_rng(4)
    X, r, w = weighted_instance(rng, 60, 4)
    X[:, 0] = 1.0
    r = r + 5.0
    pf = np.array([0.0, 1.0, 1.0, 1.0])
    theta, _ = lasso_coordinate_descent(X, r, w, 1e6, penalty_factor=pf)
    # only the intercept survives a huge penalty, at the weighted mean
    assert theta[0] == pytest.approx(np.average(r, weights=w))
    np.testing.assert_array_equal(theta[1:], 0.0)
    assert kkt_violation(X, r, w, 1e6, theta, pf) <= 1e-6


def test_non_convergence_is_flagged():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((50, 20))
    X[:, 1] = X[:, 0] + 1e-3 * rng.standard_normal(50)
    r = X[:, 0] + rng.standard_normal(50)
    theta, converged = lasso_coordinate_descent(X, r, None, 1e-3, max_sweeps=1, tol=1e-12)
    assert not converged
    assert np.all(np.isfinite(theta))


def test_negative_penalty_rejected():
    with pytest.raises(ParameterError):
        lasso_coordinate_descent(np.eye(2), np.ones(2), None, -1.0)


def test_sparsity_shrinks_as_penalty_doubles():
    violations = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        X, r, w = weighted_instance(rng, 100, 40, sparsity=5)
        lam = 0.05 * lambda_max(X, r, w)
        nnz1 = np.count_nonzero(lasso_coordinate_descent(X, r, w, lam)[0])
        nnz2 = np.count_nonzero(lasso_coordinate_descent(X, r, w, 2 * lam)[0])
        violations += nnz2 > nnz1
    assert violations <= 2


def test_cross_validation_prefers_sparse_fit_on_sparse_truth():
    rng = np.random.default_rng(6)
    X, r, w = weighted_instance(rng, 200, 30, sparsity=2)
    lmax = lambda_max(X, r, w)
    grid = lmax * np.array([1e-4, 1e-2, 0.1, 0.5, 1.0])
    chosen = cross_validate_lasso(X, r, w, grid)
    assert 1e-4 * lmax < chosen < lmax


def test_estimator_wrapper():
    rng = np.random.default_rng(7)
    X, r, w = weighted_instance(rng, 100, 5)
    est = WeightedLasso(alpha=2.0).fit(X, r, sample_weight=w)
    assert est.converged_
    theta, _ = lasso_coordinate_descent(X, r, w, 2.0)
    np.testing.assert_allclose(est.coef_, theta)
    np.testing.assert_allclose(est.predict(X[:3]), X[:3] @ theta)
