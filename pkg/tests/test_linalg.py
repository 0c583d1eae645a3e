import numpy as np
import pytest

from balanced_bandits.exceptions import NumericalError
from balanced_bandits.linalg import cholesky_jittered, draw_multivariate_normal, spd_solve


def test_zero_covariance_returns_mean_exactly():
    rng = np.random.default_rng(0)
    mean = np.array([1.5, -2.0, 0.25])
    np.testing.assert_array_equal(draw_multivariate_normal(mean, np.zeros((3, 3)), rng), mean)


def test_identity_covariance_sample_moments():
    rng = np.random.default_rng(1)
    draws = np.array([draw_multivariate_normal(np.zeros(2), np.eye(2), rng) for _ in range(100_000)])
    np.testing.assert_allclose(np.cov(draws.T), np.eye(2), atol=0.05)


def test_diagonal_covariance_sample_standard_deviations():
    rng = np.random.default_rng(2)
    draws = np.array([draw_multivariate_normal(np.zeros(2), np.diag([4.0, 9.0]), rng)
                      for _ in range(50_000)])
    np.testing.assert_allclose(draws.std(axis=0), [2.0, 3.0], rtol=0.02)


def test_scale_multiplies_the_deviation():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    a = draw_multivariate_normal(np.ones(2), cov, np.random.default_rng(5), scale=1.0)
    b = draw_multivariate_normal(np.ones(2), cov, np.random.default_rng(5), scale=3.0)
    np.testing.assert_allclose(b - 1, 3 * (a - 1))


def test_singular_psd_matrix_factorizes_with_jitter():
    v = np.array([1.0, 2.0, 3.0])
    A = np.outer(v, v)
    L = cholesky_jittered(A)
    np.testing.assert_allclose(L @ L.T, A, atol=1e-6)


def test_indefinite_matrix_raises_after_escalation():
    with pytest.raises(NumericalError):
        cholesky_jittered(np.diag([1.0, -1.0]))


def test_spd_solve_matches_numpy():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((6, 6))
    A = M @ M.T + np.eye(6)
    b = rng.standard_normal(6)
    np.testing.assert_allclose(spd_solve(A, b), np.linalg.solve(A, b), rtol=1e-10)
