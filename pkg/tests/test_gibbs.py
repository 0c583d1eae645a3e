import numpy as np
import pytest

from balanced_bandits.exceptions import ParameterError
from balanced_bandits.gibbs import (
    BayesianLassoTS,
    GibbsState,
    bayesian_lasso_gibbs_step,
    initial_gibbs_state,
    inverse_gaussian,
    run_chain,
    theta_conditional,
)


def test_inverse_gaussian_moments():
    draws = inverse_gaussian(2.0, 3.0, np.random.default_rng(0), size=100_000)
    assert draws.mean() == pytest.approx(2.0, rel=0.02)
    # variance of IG(mu, lam) is mu^3 / lam
    assert draws.var() == pytest.approx(8.0 / 3.0, rel=0.05)
    assert np.all(draws > 0)


def test_inverse_gaussian_matches_numpy_wald_quantiles():
    rng = np.random.default_rng(1)
    ours = np.sort(inverse_gaussian(0.7, 0.4, rng, size=50_000))
    ref = np.sort(rng.wald(0.7, 0.4, size=50_000))
    qs = np.linspace(0.05, 0.95, 10)
    np.testing.assert_allclose(np.quantile(ours, qs), np.quantile(ref, qs), rtol=0.05)


def test_inverse_gaussian_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        inverse_gaussian(-1.0, 1.0, np.random.default_rng(0))


def test_empty_data_draws_are_centred():
    rng = np.random.default_rng(2)
    state = GibbsState(np.ones(2), np.ones(2), 1.0, 1.0)
    draws = []
    for _ in range(10_000):
        state = bayesian_lasso_gibbs_step(state, np.empty((0, 2)), np.empty(0), rng)
        draws.append(state.theta)
    draws = np.array(draws)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    # successive draws are correlated through tau, so allow a wider band than 3 iid SEs
    assert np.all(np.abs(draws.mean(axis=0)) <= 6 * se)


def test_conditional_mean_matches_dense_solve():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 4))
    r = rng.standard_normal(50)
    tau_sq = np.full(4, 1e6)
    for form, D in (("as_paper", np.diag(tau_sq)), ("inverse", np.diag(1 / tau_sq))):
        mean, _ = theta_conditional(X.T @ X, X.T @ r, tau_sq, 0.5, form)
        np.testing.assert_allclose(mean, np.linalg.solve(X.T @ X + D, X.T @ r), atol=1e-10)
    # with negligible local precision the conditional mean is the OLS fit
    mean, _ = theta_conditional(X.T @ X, X.T @ r, tau_sq, 0.5, "inverse")
    np.testing.assert_allclose(mean, np.linalg.lstsq(X, r, rcond=None)[0], atol=1e-5)


def test_conditional_covariance_matches_sigma_squared_inverse():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((20, 2))
    r = rng.standard_normal(20)
    state = GibbsState(np.zeros(2), np.ones(2), 0.3, 1e-3)
    gram = X.T @ X
    draws = []
    for _ in range(20_000):
        draws.append(bayesian_lasso_gibbs_step(state, X, r, rng).theta)
    # with tiny lambda the sampled tau^2 are tiny, so A is close to X'X
    np.testing.assert_allclose(np.cov(np.array(draws).T), 0.3 * np.linalg.inv(gram), rtol=0.1, atol=1e-4)


def test_mean_clamp_is_flagged():
    state = GibbsState(np.zeros(2), np.ones(2), 1.0, 1e4)
    new = bayesian_lasso_gibbs_step(state, np.eye(2), np.zeros(2), np.random.default_rng(0))
    assert new.clamped
    assert np.all(np.isfinite(new.theta))


def test_state_validation():
    with pytest.raises(ParameterError):
        GibbsState(np.zeros(2), np.array([1.0, 0.0]), 1.0, 1.0)
    with pytest.raises(ParameterError):
        theta_conditional(np.eye(2), np.zeros(2), np.ones(2), 1.0, "other")


def test_initial_state_follows_exponential_prior():
    rng = np.random.default_rng(5)
    tau = np.array([initial_gibbs_state(3, 2.0, 1.0, rng).tau_sq for _ in range(20_000)])
    # exponential with rate lam^2 / 2 has mean 2 / lam^2
    assert tau.mean() == pytest.approx(0.5, rel=0.03)


def reference_chain(X, r, n_steps, lam, sigma_sq, seed):
    """Slow element-by-element chain drawing tau from numpy's Wald sampler."""
    rng = np.random.default_rng(seed)
    p = X.shape[1]
    tau = rng.exponential(2 / lam**2, p)
    theta = np.sqrt(sigma_sq * tau) * rng.standard_normal(p)
    out = []
    for _ in range(n_steps):
        for j in range(p):
            mu = min(np.sqrt(lam**2 * sigma_sq / max(abs(theta[j]), 1e-8) ** 2), 1e8)
            tau[j] = rng.wald(mu, lam**2)
        A = X.T @ X + np.diag(tau)
        A_inv = np.linalg.inv(A)
        theta = rng.multivariate_normal(A_inv @ X.T @ r, sigma_sq * A_inv)
        out.append(theta)
    return np.array(out)


def sparse_problem(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((200, 5))
    theta = np.array([2.0, 0, 0, 0, 0])
    return X, X @ theta + 0.1 * rng.standard_normal(200)


@pytest.mark.parametrize("seed", range(5))
def test_sparse_recovery_chain(seed):
    X, r = sparse_problem(seed)
    draws = run_chain(X, r, 1000, lam=1.0, sigma_sq=0.01, rng=seed)[500:]
    post = draws.mean(axis=0)
    assert 1.5 <= post[0] <= 2.5
    assert np.all(np.abs(post[1:]) <= 0.3)


def test_sparse_recovery_agrees_with_reference_chain():
    X, r = sparse_problem(0)
    fast = run_chain(X, r, 1000, lam=1.0, sigma_sq=0.01, rng=11)[500:].mean(axis=0)
    slow = reference_chain(X, r, 1000, 1.0, 0.01, 12)[500:].mean(axis=0)
    np.testing.assert_allclose(fast, slow, atol=0.01)


def test_single_arm_policy_always_plays_it():
    policy = BayesianLassoTS(random_state=0).start(1, 2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal(2)
        assert policy.select_arm(x, rng) == 0
        policy.update(x, 0, 1.0)


def test_two_arm_sign_problem():
    policy = BayesianLassoTS(lam=1.0, sigma_sq=0.01, n_gibbs=5, random_state=0).start(2, 1)
    rng = np.random.default_rng(1)
    correct = []
    for _ in range(1000):
        x = rng.standard_normal(1)
        a = policy.select_arm(x, rng)
        means = np.array([x[0], -x[0]])
        policy.update(x, a, means[a] + 0.05 * rng.standard_normal())
        correct.append(a == int(np.argmax(means)))
    assert np.mean(correct[500:]) >= 0.9


def test_only_the_played_arm_moves():
    policy = BayesianLassoTS(random_state=2).start(3, 2)
    before = [m.copy() for m in policy.state_.models]
    policy.update(np.ones(2), 1, 0.5)
    assert np.array_equal(policy.state_.models[0], before[0])
    assert np.array_equal(policy.state_.models[2], before[2])
    assert not np.array_equal(policy.state_.models[1], before[1])
