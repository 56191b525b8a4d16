"""Tests for the random-matrix machinery: MP law, Tracy-Widom table,
eigenvalue significance, and the retention loop control flow."""
import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from saemifa.spectral import (
    InvalidRatio,
    NonPositiveDiagonal,
    OutOfTableRange,
    RetentionState,
    cov_to_corr,
    eigenvalue_ratios,
    mp_bounds,
    mp_cdf,
    mp_density,
    retain_dimensions,
    sample_wishart_eigenvalues,
    significant_eigenvalues,
    tw_cdf,
    tw_mean,
    tw_quantile,
    tw_scaling,
)


def test_wishart_single_dimension_mean():
    rng = np.random.default_rng(0)
    eigs = [sample_wishart_eigenvalues(1, 50, rng)[0] for _ in range(1000)]
    assert abs(np.mean(eigs) - 1.0) < 0.05


def test_wishart_average_eigenvalue_is_trace():
    rng = np.random.default_rng(1)
    v = rng.standard_normal((200, 6))
    s = v.T @ v / 200
    eigs = sample_wishart_eigenvalues(6, 200, np.random.default_rng(1))
    assert np.isclose(eigs.mean(), np.trace(s) / 6)
    assert np.all(np.diff(eigs) <= 0)


def test_mp_bounds_and_support():
    b = mp_bounds(0.01)
    assert np.isclose(b.lower, 0.81) and np.isclose(b.upper, 1.21)
    assert mp_density(0.5, 0.01) == 0.0
    assert mp_density(1.5, 0.01) == 0.0
    with pytest.raises(InvalidRatio):
        mp_density(1.0, 1.5)


@pytest.mark.parametrize("c", [0.01, 0.1, 0.5, 1.0])
def test_mp_density_normalizes(c):
    b = mp_bounds(c)
    lo = b.lower if c < 1 else 1e-12
    total, err = quad(lambda x: mp_density(x, c), lo, b.upper, limit=400)
    assert abs(total - 1.0) < 1e-6


def test_mp_ks_against_pooled_wishart_eigenvalues():
    """500 normalized Wishart samples at J=40, N=4000: pooled eigenvalue ECDF
    within KS distance .05 of the MP CDF at c=.01."""
    rng = np.random.default_rng(2)
    pooled = np.concatenate([sample_wishart_eigenvalues(40, 4000, rng)
                             for _ in range(500)])
    d = stats.kstest(pooled, lambda x: mp_cdf(x, 0.01)).statistic
    assert d < 0.05


def test_tw_scaling_formulas():
    sc = tw_scaling(10, 100)
    mu = (np.sqrt(99) + np.sqrt(10)) ** 2
    sig = (np.sqrt(99) + np.sqrt(10)) * (1 / np.sqrt(99) + 1 / np.sqrt(10)) ** (1 / 3)
    assert np.isclose(sc.mu_j, mu) and np.isclose(sc.sigma_j, sig)
    assert abs(sc.mu_j - 171.93) < 0.5
    assert abs(sc.sigma_j - 9.80) < 0.2
    sym = tw_scaling(99, 100)
    assert np.isclose(sym.mu_j, 4 * 99)


def test_tw_cdf_tabulated_values():
    # reference quantiles of the beta=1 Tracy-Widom law
    assert tw_cdf(-10.0) < 1e-6
    assert abs(tw_cdf(-3.90) - 0.01) < 0.002
    assert abs(tw_cdf(0.98) - 0.95) < 0.002
    assert abs(tw_cdf(2.02) - 0.99) < 0.002
    assert abs(tw_mean() - (-1.2065)) < 0.005


def test_tw_cdf_monotone_and_roundtrip():
    from saemifa.spectral import _tw_table
    grid, f1 = _tw_table()
    assert np.all(np.diff(f1) >= -1e-12)
    for p in (0.001, 0.05, 0.5, 0.95, 0.999):
        assert abs(tw_cdf(tw_quantile(p)) - p) < 1e-4


def test_tw_cdf_out_of_range_clamps():
    with pytest.warns(OutOfTableRange):
        v = tw_cdf(50.0)
    assert v == pytest.approx(1.0, abs=1e-5)


@pytest.mark.slow
def test_tw_matches_largest_wishart_eigenvalue():
    """Centered/scaled top eigenvalues at J=100, N=10000 follow the table."""
    rng = np.random.default_rng(3)
    sc = tw_scaling(100, 10_000)
    tops = np.empty(500)
    for i in range(500):
        v = rng.standard_normal((10_000, 100))
        s = v.T @ v  # unnormalized Wishart
        tops[i] = (np.linalg.eigvalsh(s)[-1] - sc.mu_j) / sc.sigma_j
    p = stats.kstest(tops, tw_cdf).pvalue
    assert p > 0.01


@pytest.mark.slow
def test_significance_null_calibration():
    """False-positive rate of the TW significance count on pure noise is at
    most .005 at alpha=.001 over 1000 trials."""
    rng = np.random.default_rng(4)
    j, n = 50, 2000
    hits = 0
    for _ in range(1000):
        eigs = sample_wishart_eigenvalues(j, n, rng)
        if significant_eigenvalues(eigs, j, n, alpha=0.001) > 0:
            hits += 1
    assert hits / 1000 <= 0.005


def test_significant_eigenvalues_detects_planted_factor():
    rng = np.random.default_rng(5)
    n, j = 4000, 40
    a = rng.uniform(0.8, 1.2, (j, 1))
    v = rng.standard_normal((n, 1)) @ a.T + rng.standard_normal((n, j))
    s = v.T @ v / n
    eigs = np.linalg.eigvalsh(s)[::-1]
    assert significant_eigenvalues(eigs, j, n) == 1


def test_cov_to_corr():
    assert np.allclose(cov_to_corr(np.diag([2.0, 5.0])), np.eye(2))
    s = np.array([[1.0, 0.5], [0.5, 4.0]])
    assert np.isclose(cov_to_corr(s)[0, 1], 0.25)
    with pytest.raises(NonPositiveDiagonal):
        cov_to_corr(np.array([[1.0, 0.0], [0.0, -0.5]]))
    rng = np.random.default_rng(6)
    m = rng.standard_normal((5, 5))
    spd = m @ m.T + 5 * np.eye(5)
    r = cov_to_corr(spd)
    assert np.linalg.eigvalsh(r).min() > -1e-10


def test_eigenvalue_ratios():
    assert np.allclose(eigenvalue_ratios([3.0, 3.0, 3.0]), 1.0)
    assert np.allclose(eigenvalue_ratios([4.0, 2.0, 1.0]), [2.0, 2.0])
    with pytest.raises(ValueError):
        eigenvalue_ratios([1.0])


def _synthetic_fitter(j, n, n_factors, rng, strength=1.0):
    """Stand-in for a SAEM fit: S2 = AA^T + I plus Wishart noise."""
    a = np.zeros((j, n_factors))
    block = j // max(n_factors, 1)
    for m in range(n_factors):
        a[m * block:(m + 1) * block, m] = strength

    def fitter(q):
        theta = rng.standard_normal((n, n_factors))
        z = theta @ a.T + rng.standard_normal((n, j))
        return z.T @ z / n

    return fitter


def test_retain_dimensions_agreeing_counts():
    rng = np.random.default_rng(7)
    j, n = 30, 3000
    history = []
    q, d_f = retain_dimensions(_synthetic_fitter(j, n, 3, rng), j, n,
                               history=history)
    assert q == 3 and d_f == 0
    assert len(history) <= j + 2
    assert all(isinstance(h, RetentionState) for h in history)


def test_retain_dimensions_pure_noise():
    rng = np.random.default_rng(8)
    j, n = 20, 4000

    def fitter(q):
        v = rng.standard_normal((n, j))
        return v.T @ v / n

    q, d_f = retain_dimensions(fitter, j, n)
    assert q == 0 and d_f == 0


def test_retain_dimensions_persistent_gap_terminates():
    """A fitter whose covariance count always exceeds the correlation count
    forces the repeat-gap exit with nonzero d_f."""
    j, n = 12, 5000
    rng = np.random.default_rng(9)
    base = np.eye(j)
    # one strong factor visible in both scalings, one planted only in the
    # covariance scaling by inflating a single variance
    a = np.full((j, 1), 1.2)
    cov = base + a @ a.T
    cov[0, 0] += 8.0

    q, d_f = retain_dimensions(lambda q_: cov, j, n)
    assert d_f > 0
    assert q >= 1
