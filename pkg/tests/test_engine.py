"""Tests for the SAEM iteration control: initialization, gains, M-steps,
convergence, and the small-problem fit against a quadrature-MLE oracle."""
import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri

from saemifa.engine import (
    AllEigenvaluesNonPositive,
    check_convergence,
    compute_fit_statistics,
    default_schedule,
    fit,
    gain,
    initialize,
    m_step_intercepts,
    m_step_loadings,
    rm_update,
)
from saemifa.model import ConvergenceConfig, GainSchedule, validate_response_matrix
from saemifa.simulation import condition, generate_abilities, generate_parameters, generate_responses


def test_default_schedule_by_sample_size():
    assert default_schedule(5_000).burn_in == 1000
    assert default_schedule(30_000).burn_in == 500
    assert default_schedule(200_000).burn_in == 300


def test_initialize_intercepts_from_proportions():
    rng = np.random.default_rng(0)
    # items with 50% and ~10% correct
    y = np.zeros((1000, 2), int)
    y[:500, 0] = 1
    y[:100, 1] = 1
    params, abilities = initialize(validate_response_matrix(y), 3)
    assert abs(params.intercepts[0]) < 1e-12
    assert abs(params.intercepts[1] - ndtri(0.9)) < 1e-9  # b ~ 1.2816
    assert np.allclose(params.loadings[:, 0], 1.0)
    assert np.allclose(params.loadings[:, 1:], 0.0)
    assert np.allclose(abilities.theta, 0.0)


def test_initialize_polytomous_cutpoints_ordered():
    rng = np.random.default_rng(1)
    y = validate_response_matrix(rng.integers(0, 4, size=(500, 5)))
    params, _ = initialize(y, 1)
    d = params.cutpoints()
    assert np.all(np.diff(d, axis=1) > 0)
    assert np.max(np.abs(params.thresholds.sum(axis=1))) < 1e-8


def test_gain_phases():
    sched = GainSchedule(burn_in=100)  # window 20
    rng = np.random.default_rng(2)
    assert gain(50, sched, rng) == 1.0
    assert gain(80, sched, rng) == 1.0
    assert gain(101, sched, rng) == 0.5  # first RM iteration
    assert np.isclose(gain(102, sched, rng), 1 / 3)


def test_gain_annealing_window_bounds():
    sched = GainSchedule(burn_in=100)
    b, w = sched.burn_in, sched.anneal_window
    rng = np.random.default_rng(3)
    for _ in range(2000):
        t = int(rng.integers(b - w + 1, b + 1))
        wi = t - (b - w)
        amp = (wi / w) * np.cos(wi) ** 2
        lo, hi = (1 - amp, 1.0) if wi <= w / 2 else (0.5 - amp, 1 - amp)
        g = gain(t, sched, rng)
        assert max(lo, 1e-6) - 1e-12 <= g <= max(hi, 2e-6) + 1e-12
        assert 0 < g <= 1


def test_gain_monotone_after_rm():
    sched = GainSchedule(burn_in=50)
    gains = [gain(t, sched, None) for t in range(51, 200)]
    assert np.all(np.diff(gains) < 0)


def test_rm_update():
    assert rm_update(np.array(0.0), 1.0, 1.0) == 1.0
    assert rm_update(np.array(0.0), 1.0, 0.5) == 0.5
    s = np.array(0.0)
    for t in range(1, 1001):
        s = rm_update(s, 1.0, 1.0 / t)
    assert abs(s - 1.0) < 1e-6


def test_m_step_intercepts():
    b, tau = m_step_intercepts(np.zeros((3, 2)))
    assert np.allclose(b, 0) and np.allclose(tau, 0)
    rng = np.random.default_rng(4)
    mu = rng.standard_normal((5, 3))
    b1, tau1 = m_step_intercepts(mu)
    b2, tau2 = m_step_intercepts(mu + 0.4)
    assert np.allclose(b2, b1 - 0.4)
    assert np.allclose(tau2, tau1)
    assert np.max(np.abs(tau1.sum(axis=1))) < 1e-10


def test_m_step_loadings_identity_gives_zero():
    with pytest.warns(AllEigenvaluesNonPositive):
        a = m_step_loadings(np.eye(4), 2)
    assert np.allclose(a, 0.0)


def test_m_step_loadings_rank_one():
    u = np.array([0.6, 0.8, 0.0])
    sigma = np.eye(3) + 2.25 * np.outer(u, u)
    a = m_step_loadings(sigma, 1)
    assert np.allclose(a[:, 0], 1.5 * u, atol=1e-10)


def test_m_step_loadings_eckart_young():
    rng = np.random.default_rng(5)
    true = rng.standard_normal((8, 3))
    sigma = np.eye(8) + true @ true.T
    a = m_step_loadings(sigma, 3)
    # AA^T is the best rank-3 approximation of Sigma - I
    assert np.allclose(a @ a.T, true @ true.T, atol=1e-8)


def test_m_step_consistency_recovers_generator():
    rng = np.random.default_rng(6)
    true = np.abs(rng.uniform(0.5, 1.5, (10, 1)))
    sigma = np.eye(10) + true @ true.T
    a = m_step_loadings(sigma, 1)
    assert np.allclose(np.abs(a), np.abs(true), atol=1e-8)


def test_check_convergence():
    cfg = ConvergenceConfig(epsilon=1e-4, window=3)
    base = [1.0, 1.0 + 1e-5, 1.0 + 2e-5, 1.0 + 3e-5]
    assert check_convergence(base, cfg)
    assert not check_convergence([1.0, 1.0 + 1e-5, 1.0 + 2e-3, 1.0 + 2e-3 + 1e-5], cfg)
    assert not check_convergence([1.0, 1.0], cfg)


def _quadrature_mle(y, n_nodes=101):
    """Brute-force marginal MLE for a tiny 1D dichotomous test (oracle)."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    n, j = y.shape

    def nll(x):
        a, b = x[:j], x[j:]
        p = ndtr(nodes[:, None] * a - b)  # M x J
        like = np.ones((n_nodes, n))
        for jj in range(j):
            like *= np.where(y[:, jj] == 1, p[:, jj:jj + 1], 1 - p[:, jj:jj + 1])
        marg = weights @ like
        return -np.sum(np.log(np.clip(marg, 1e-300, None)))

    x0 = np.concatenate([np.ones(j), np.zeros(j)])
    res = minimize(nll, x0, method="Nelder-Mead",
                   options={"maxiter": 20000, "xatol": 1e-6, "fatol": 1e-8})
    return res.x[:j], res.x[j:]


@pytest.mark.slow
def test_fit_matches_quadrature_mle_oracle():
    """J=3, N=200 toy: SAEM within 0.15 of direct marginal MLE, 5 seeds.

    With three items the marginal likelihood is nearly flat in the slopes, so
    the stochastic approximation uses a slower gain decay (alpha = .55) to
    average the flat directions down.  Datasets whose MLE diverges (a slope
    escaping to infinity; the likelihood is unbounded there and "distance to
    the MLE" is meaningless) are skipped; the first five interior-MLE seeds
    are compared.
    """
    a_true = np.array([[0.9], [1.2], [0.7]])
    b_true = np.array([-0.3, 0.2, 0.5])
    compared = 0
    seed = 0
    while compared < 5:
        rng = np.random.default_rng(100 + seed)
        theta = rng.standard_normal((200, 1))
        z = theta @ a_true.T + rng.standard_normal((200, 3))
        y = (z > b_true).astype(int)
        a_mle, b_mle = _quadrature_mle(y)
        if np.max(np.abs(a_mle)) >= 3.0:  # divergent MLE
            seed += 1
            continue
        res = fit(validate_response_matrix(y), 1, model="2PNO",
                  schedule=GainSchedule(burn_in=1000, alpha=0.55),
                  cfg=ConvergenceConfig(max_iterations=9000), rng=seed)
        assert np.max(np.abs(res.parameters.loadings[:, 0] - np.abs(a_mle))) < 0.15
        assert np.max(np.abs(res.parameters.intercepts - b_mle)) < 0.15
        compared += 1
        seed += 1


def test_fit_statistics_dof():
    rng = np.random.default_rng(7)
    spec = condition(1)
    params = generate_parameters(spec, rng)
    theta = generate_abilities(spec, rng, n=200)
    y = generate_responses(params, theta, rng)
    # J=100, Q=1, K=2 -> dof = 200
    stats = compute_fit_statistics(y, params, rng=rng, n_draws=100)
    assert stats["dof"] == 200
    assert stats["aic"] == pytest.approx(2 * 200 - 2 * stats["logl"])
    assert stats["bic"] == pytest.approx(200 * np.log(200) - 2 * stats["logl"])


def test_fit_statistics_dof_examples():
    # 30 items, 2 factors, K=2, no guessing -> 90; Q=1 with guessing -> 90
    rng = np.random.default_rng(8)
    y = validate_response_matrix(rng.integers(0, 2, size=(50, 30)))
    from saemifa.model import ItemParameters
    p2 = ItemParameters(loadings=np.ones((30, 2)) * [1.0, 0.1],
                        intercepts=np.zeros(30), thresholds=np.zeros((30, 1)))
    p3 = ItemParameters(loadings=np.ones((30, 1)), intercepts=np.zeros(30),
                        thresholds=np.zeros((30, 1)), guessing=np.full(30, 0.2))
    assert compute_fit_statistics(y, p2, n_draws=50)["dof"] == 90
    assert compute_fit_statistics(y, p3, n_draws=50)["dof"] == 90


def test_loglik_peaks_near_truth():
    """Perturbing the generating parameters rarely increases the marginal
    likelihood on data simulated from them."""
    rng = np.random.default_rng(9)
    spec = condition(1)
    params = generate_parameters(spec, rng)
    theta = generate_abilities(spec, rng, n=3000)
    y = generate_responses(params, theta, rng)
    from saemifa.engine import marginal_loglik
    base = marginal_loglik(y, params)
    wins = 0
    trials = 20
    for _ in range(trials):
        noisy = params.with_loadings(params.loadings + rng.normal(0, 0.15, params.loadings.shape))
        if marginal_loglik(y, noisy) <= base:
            wins += 1
    assert wins >= int(0.95 * trials) - 1


def test_fit_nonconvergence_flagged():
    rng = np.random.default_rng(10)
    y = validate_response_matrix(rng.integers(0, 2, size=(200, 8)))
    import warnings as w
    with pytest.warns(UserWarning):
        res = fit(y, 1, schedule=GainSchedule(burn_in=20),
                  cfg=ConvergenceConfig(epsilon=1e-6, max_iterations=30), rng=0)
    assert not res.converged
    assert res.iterations_used == 30


def test_fit_reproducible_given_seed():
    rng = np.random.default_rng(11)
    y = validate_response_matrix(rng.integers(0, 2, size=(300, 10)))
    kw = dict(schedule=GainSchedule(burn_in=60),
              cfg=ConvergenceConfig(max_iterations=200), rng=5)
    import warnings as w
    with w.catch_warnings():
        w.simplefilter("ignore")
        r1 = fit(y, 1, **kw)
        r2 = fit(y, 1, **kw)
    assert np.array_equal(r1.parameters.loadings, r2.parameters.loadings)
    assert np.array_equal(r1.trace_history, r2.trace_history)
