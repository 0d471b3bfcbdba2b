import numpy as np
import pytest
from scipy.stats import chi2, norm

from gmia.combine import covariance_from_correlation, fisher_combine, kost_combine


def test_identity_correlation_is_fisher():
    rng = np.random.default_rng(0)
    for n in range(1, 21):
        p = rng.uniform(1e-6, 1, n)
        oracle = chi2.sf(-2 * np.log(p).sum(), 2 * n)
        assert kost_combine(p, np.eye(n)).p_value == pytest.approx(oracle, abs=1e-9)
        assert fisher_combine(p) == pytest.approx(oracle, abs=1e-9)


def test_single_p_value_passes_through():
    for p in (1e-5, 0.03, 0.5, 0.99):
        assert kost_combine([p], np.eye(1)).p_value == pytest.approx(p, abs=1e-9)


def test_all_halves():
    res = kost_combine([0.5] * 4, np.eye(4))
    assert res.p_value == pytest.approx(chi2.sf(8 * np.log(2), 8), abs=1e-12)


def test_perfect_correlation_widens_the_null():
    p = [0.01] * 5
    assert kost_combine(p, np.ones((5, 5))).p_value > kost_combine(p, np.eye(5)).p_value


def test_moment_matching():
    rho = np.full((3, 3), 0.4)
    np.fill_diagonal(rho, 1)
    res = kost_combine([0.2, 0.3, 0.4], rho)
    var = 12 + 2 * 3 * covariance_from_correlation(0.4)
    assert res.scale == pytest.approx(var / 12)
    assert res.dof == pytest.approx(72 / var)
    assert res.scale * res.dof == pytest.approx(6)


def test_zero_p_is_floored_and_flagged():
    res = kost_combine([0.0, 0.5], np.eye(2))
    assert res.floored and 0 <= res.p_value < 1e-8


def test_negative_variance_falls_back_to_fisher():
    rho = np.full((4, 4), -1.0)
    np.fill_diagonal(rho, 1)
    res = kost_combine([0.1, 0.2, 0.3, 0.4], rho)
    assert res.independence_fallback
    assert res.p_value == pytest.approx(fisher_combine([0.1, 0.2, 0.3, 0.4]), abs=1e-12)


def test_validation():
    with pytest.raises(ValueError):
        kost_combine([], np.eye(0))
    with pytest.raises(ValueError):
        kost_combine([0.1, 0.2], np.eye(3))
    with pytest.raises(ValueError):
        kost_combine([1.5], np.eye(1))


def test_correlated_null_rejection_rate():
    rng = np.random.default_rng(2024)
    n, rho, draws = 5, 0.5, 10_000
    cov = np.full((n, n), rho)
    np.fill_diagonal(cov, 1)
    z = rng.multivariate_normal(np.zeros(n), cov, size=draws)
    p = norm.sf(z)
    rate = np.mean([kost_combine(row, cov).p_value < 0.05 for row in p])
    assert abs(rate - 0.05) <= 0.02
