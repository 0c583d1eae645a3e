import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import lu_factor, lu_solve
from sklearn.base import clone

from balanced_bandits.exceptions import ParameterError, ShapeError
from balanced_bandits.ridge import (
    ArmHistory,
    FittedArmModel,
    WeightedRidge,
    cross_validate_lambda,
    fit_weighted_ridge,
    predict_mean_var,
)


def dense_ridge_oracle(X, r, w, lam):
    """Normal equations solved by LU, independent of the Cholesky path."""
    B = X.T @ np.diag(w) @ X + lam * np.eye(X.shape[1])
    return lu_solve(lu_factor(B), X.T @ np.diag(w) @ r)


def random_instance(rng, n, d, weights=True):
    X = rng.standard_normal((n, d))
    r = X @ rng.standard_normal(d) + 0.3 * rng.standard_normal(n)
    w = rng.uniform(1, 10, n) if weights else np.ones(n)
    return X, r, w


def test_empty_history_is_the_prior():
    model = fit_weighted_ridge(ArmHistory.empty(2), 1.0)
    np.testing.assert_array_equal(model.theta_hat, [0.0, 0.0])
    np.testing.assert_array_equal(model.precision, np.eye(2))
    np.testing.assert_allclose(model.covariance, np.eye(2))


def test_single_observation_scalar_closed_form():
    model = fit_weighted_ridge(ArmHistory([[1.0]], [1.0], [1.0]), 1.0)
    assert model.precision[0, 0] == pytest.approx(2.0)
    assert model.theta_hat[0] == pytest.approx(0.5)
    # residual 0.5, so the scale is 0.25 and the covariance 0.25 / 2
    assert model.covariance[0, 0] == pytest.approx(0.125)


def test_random_instance_matches_lu_oracle():
    rng = np.random.default_rng(7)
    X, r, w = random_instance(rng, 20, 5)
    model = fit_weighted_ridge(ArmHistory(X, r, w), 0.7)
    np.testing.assert_allclose(model.theta_hat, dense_ridge_oracle(X, r, w, 0.7), atol=1e-10)


def test_covariance_is_residual_scaled_inverse_precision():
    rng = np.random.default_rng(3)
    X, r, w = random_instance(rng, 30, 4)
    model = fit_weighted_ridge(ArmHistory(X, r, w), 2.0)
    resid = r - X @ model.theta_hat
    expected = np.linalg.inv(model.precision) * (resid @ (w * resid))
    np.testing.assert_allclose(model.covariance, expected, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(model.covariance, model.covariance.T)
    assert np.linalg.eigvalsh(model.precision).min() >= 2.0 - 1e-9


@pytest.mark.parametrize("lam", [0.0, -1.0, np.inf])
def test_non_positive_lambda_rejected(lam):
    with pytest.raises(ParameterError):
        fit_weighted_ridge(ArmHistory.empty(2), lam)


def test_history_shape_errors():
    with pytest.raises(ShapeError):
        ArmHistory(np.zeros((3, 2)), np.zeros(2), np.ones(3))
    with pytest.raises(ShapeError):
        fit_weighted_ridge(ArmHistory(np.zeros((3, 2)), np.zeros(3), np.ones(3)), 1.0, n_features=3)


def test_predict_mean_var_examples():
    zero = fit_weighted_ridge(ArmHistory.empty(2), 1.0)
    assert predict_mean_var(zero, [5.0, -2.0])[0] == 0.0
    unit = FittedArmModel(np.zeros(2), np.eye(2), np.eye(2), 1.0)
    assert predict_mean_var(unit, [3.0, 4.0])[1] == pytest.approx(25.0)
    with pytest.raises(ShapeError):
        predict_mean_var(unit, [1.0, 2.0, 3.0])


def test_predict_variance_matches_double_loop():
    rng = np.random.default_rng(11)
    X, r, w = random_instance(rng, 40, 6)
    model = fit_weighted_ridge(ArmHistory(X, r, w), 1.0)
    x = rng.standard_normal(6)
    quad = 0.0
    for i in range(6):
        for j in range(6):
            quad += x[i] * model.covariance[i, j] * x[j]
    mu, s2 = predict_mean_var(model, x)
    assert mu == pytest.approx(sum(x[i] * model.theta_hat[i] for i in range(6)), abs=1e-12)
    assert s2 == pytest.approx(quad, abs=1e-12)


def test_variance_clamped_at_zero():
    model = FittedArmModel(np.zeros(1), np.eye(1), -np.eye(1) * 1e-18, 1.0)
    assert predict_mean_var(model, [1.0])[1] == 0.0


instances = st.tuples(
    st.integers(min_value=1, max_value=100),
    st.integers(min_value=1, max_value=10),
    st.sampled_from([0.1, 1.0, 10.0]),
    st.integers(min_value=0, max_value=2**32 - 1),
)


@settings(max_examples=60, deadline=None)
@given(instances)
def test_unit_weights_reduce_to_plain_ridge(inst):
    n, d, lam, seed = inst
    X, r, _ = random_instance(np.random.default_rng(seed), n, d)
    model = fit_weighted_ridge(ArmHistory.unweighted(X, r), lam)
    oracle = np.linalg.solve(X.T @ X + lam * np.eye(d), X.T @ r)
    np.testing.assert_allclose(model.theta_hat, oracle, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(instances, st.floats(min_value=0.1, max_value=10.0))
def test_scaling_weights_and_penalty_leaves_estimate_unchanged(inst, c):
    n, d, lam, seed = inst
    X, r, w = random_instance(np.random.default_rng(seed), n, d)
    base = fit_weighted_ridge(ArmHistory(X, r, w), lam).theta_hat
    scaled = fit_weighted_ridge(ArmHistory(X, r, c * w), c * lam).theta_hat
    np.testing.assert_allclose(scaled, base, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(instances, st.integers(min_value=2, max_value=6))
def test_integer_weight_equals_duplicated_rows(inst, k):
    n, d, lam, seed = inst
    X, r, _ = random_instance(np.random.default_rng(seed), n, d, weights=False)
    w = np.ones(n)
    w[0] = k
    weighted = fit_weighted_ridge(ArmHistory(X, r, w), lam)
    Xd = np.vstack([X] + [X[:1]] * (k - 1))
    rd = np.concatenate([r] + [r[:1]] * (k - 1))
    duplicated = fit_weighted_ridge(ArmHistory.unweighted(Xd, rd), lam)
    np.testing.assert_allclose(weighted.theta_hat, duplicated.theta_hat, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(instances)
def test_adding_an_observation_never_shrinks_precision(inst):
    n, d, lam, seed = inst
    rng = np.random.default_rng(seed)
    X, r, w = random_instance(rng, n, d)
    hist = ArmHistory(X, r, w)
    before = np.linalg.eigvalsh(fit_weighted_ridge(hist, lam).precision)
    grown = hist.append(rng.standard_normal(d), 0.5, rng.uniform(1, 10))
    after = np.linalg.eigvalsh(fit_weighted_ridge(grown, lam).precision)
    assert np.all(after >= before - 1e-9 * max(1.0, before.max()))


def brute_force_cv(X, y, w, grid, n_folds=5):
    folds = np.arange(X.shape[0]) % n_folds
    errs = []
    for lam in grid:
        total = 0.0
        for k in range(n_folds):
            tr, te = folds != k, folds == k
            theta = dense_ridge_oracle(X[tr], y[tr], w[tr], lam)
            res = y[te] - X[te] @ theta
            total += res @ (w[te] * res)
        errs.append(total)
    return grid[int(np.argmin(errs))]


@pytest.mark.parametrize("seed", range(5))
def test_cross_validation_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, d = 40, 6
    X, y, w = random_instance(rng, n, d)
    y = y + rng.standard_normal(n) * rng.uniform(0.1, 3)
    grid = np.array([0.01, 0.1, 1.0, 10.0, 100.0])
    assert cross_validate_lambda(X, y, w, grid) == brute_force_cv(X, y, w, grid)


def test_cross_validation_falls_back_to_median_when_short():
    X = np.ones((5, 1))
    assert cross_validate_lambda(X, np.ones(5), np.ones(5), [100.0, 0.01, 1.0]) == 1.0


def test_estimator_wrapper_follows_sklearn_conventions():
    rng = np.random.default_rng(0)
    X, r, w = random_instance(rng, 50, 3)
    est = WeightedRidge(alpha=0.5)
    assert clone(est).get_params() == {"alpha": 0.5, "lambda_grid": None}
    est.fit(X, r, sample_weight=w)
    np.testing.assert_allclose(est.coef_, dense_ridge_oracle(X, r, w, 0.5), atol=1e-10)
    mu, sd = est.predict(X[:4], return_std=True)
    for i in range(4):
        m, s2 = predict_mean_var(est.model_, X[i])
        assert mu[i] == pytest.approx(m)
        assert sd[i] == pytest.approx(np.sqrt(s2))
    assert est.set_params(lambda_grid=[0.1, 1.0]).fit(X, r).alpha_ in (0.1, 1.0)
