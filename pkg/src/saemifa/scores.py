"""Examinee factor-score estimation at converged item parameters."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .engine import FitResult, GibbsSampler
from .gibbs import posterior_theta_params, sample_abilities
from .model import (
    ItemParameters,
    ResponseMatrix,
    category_probabilities,
    validate_response_matrix,
)


class UnsupportedDimensionality(ValueError):
    """Quadrature EAP is univariate only; use sampled_scores for Q > 1."""


def eap_scores(y, params: ItemParameters, n_nodes: int = 61):
    """Posterior mean and sd of theta under the N(0,1) prior by
    Gauss-Hermite quadrature (Q = 1 only)."""
    if params.n_factors != 1:
        raise UnsupportedDimensionality("eap_scores requires Q = 1")
    if not isinstance(y, ResponseMatrix):
        y = validate_response_matrix(y)
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    weights = weights / weights.sum()
    probs = category_probabilities(nodes[:, None], params)  # M x J x K
    logp = np.log(np.clip(probs, 1e-300, None))
    cols = np.arange(y.n_items)
    loglik = np.stack([logp[m][cols, y.data].sum(axis=1)
                       for m in range(n_nodes)])  # M x N
    logpost = loglik + np.log(weights)[:, None]
    logpost -= logpost.max(axis=0)
    post = np.exp(logpost)
    post /= post.sum(axis=0)
    mean = post.T @ nodes
    second = post.T @ nodes ** 2
    sd = np.sqrt(np.maximum(second - mean ** 2, 0.0))
    return mean, sd


def sampled_scores(y, fit: FitResult, n_cycles: int = 100,
                   rng: Optional[np.random.Generator] = None):
    """Chain-based factor scores reflecting parameter uncertainty.

    Each cycle resets the structural parameters to the converged values,
    runs one full Gibbs cycle with gamma = 1, and draws theta at the
    refreshed parameters; per-examinee mean and sd are taken over cycles.
    """
    if not isinstance(y, ResponseMatrix):
        y = validate_response_matrix(y)
    if rng is None:
        rng = np.random.default_rng(0)
    params = fit.parameters
    sampler = GibbsSampler(y, params.n_factors, fit.model, [rng],
                           params=params, theta=fit.theta)
    sampler.z = fit.z.copy()
    n, q = fit.theta.shape
    total = np.zeros((n, q))
    total_sq = np.zeros((n, q))
    for _ in range(n_cycles):
        # xi reset: every cycle starts at the converged estimates exactly
        sampler.a = params.loadings.copy()
        sampler.b = params.intercepts.copy()
        sampler.tau = params.thresholds.copy()
        if params.guessing is not None:
            sampler.g = params.guessing.copy()
        sampler.cycle(1.0)  # refresh xi_hat_1 from one full cycle
        post = posterior_theta_params(sampler.a)
        b_for_theta = sampler.b if sampler.k == 2 else np.zeros(sampler.j)
        draw = sample_abilities(sampler.z, sampler.a, b_for_theta, rng,
                                post=post).theta
        total += draw
        total_sq += draw ** 2
    mean = total / n_cycles
    var = np.maximum(total_sq / n_cycles - mean ** 2, 0.0)
    return mean, np.sqrt(var * n_cycles / max(n_cycles - 1, 1))
