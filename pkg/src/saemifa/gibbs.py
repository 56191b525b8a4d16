"""Conditional draws (S-steps) of the data-augmented probit factor model.

Conventions used throughout:

* ``x`` (threshold propensities, shape N x J x (K-1)) are centered at
  eta_ijk = A_j theta_i - (b_j + tau_jk) and truncated at 0: negative when
  y_ij < k, positive when y_ij >= k.
* ``z`` (ordinal-information propensities, N x J): for K > 2 they are
  centered at eta'_ij = A_j theta_i and truncated to the interval
  (d_{j,y}, d_{j,y+1}) cut by d_jk = b_j + tau_jk; for K = 2 the single
  threshold collapses and z = x (centered at A theta - b, truncated at 0).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .distributions import _sample_std_truncnorm
from .model import (
    DimensionMismatch,
    LatentAbilities,
    SufficientStatistics,
)


class CalledWithDichotomous(ValueError):
    """Threshold propensities are undefined for K=2 (the step is bypassed)."""


class NonMonotoneThresholds(ValueError):
    """Cut points d_jk must increase strictly in k."""


class NoNonKnowers(ValueError):
    """Every examinee classified as knowing an item; guessing rate undefined."""


@dataclass(frozen=True)
class PosteriorThetaParams:
    """Posterior of theta given propensities: N(beta (z+b), (I + A^T A)^-1)."""

    beta: np.ndarray  # Q x J
    posterior_cov: np.ndarray  # Q x Q
    chol: np.ndarray  # lower Cholesky factor of posterior_cov


def posterior_theta_params(a: np.ndarray) -> PosteriorThetaParams:
    """Compute beta = (I + A^T A)^-1 A^T and the posterior covariance."""
    a = np.asarray(a, dtype=float)
    q = a.shape[1]
    m = np.eye(q) + a.T @ a
    cov = np.linalg.inv(m)
    cov = 0.5 * (cov + cov.T)
    beta = np.linalg.solve(m, a.T)
    return PosteriorThetaParams(beta=beta, posterior_cov=cov, chol=np.linalg.cholesky(cov))


def sample_abilities(z: np.ndarray, a: np.ndarray, b: np.ndarray,
                     rng: np.random.Generator,
                     post: Optional[PosteriorThetaParams] = None) -> LatentAbilities:
    """Draw theta_i ~ N(beta (z_i + b), (I + A^T A)^-1) for every examinee."""
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    if z.shape[1] != a.shape[0] or a.shape[0] != np.shape(b)[0]:
        raise DimensionMismatch("z, A, b item counts disagree")
    if post is None:
        post = posterior_theta_params(a)
    mean = (z + b) @ post.beta.T  # N x Q
    eps = rng.standard_normal(mean.shape)
    return LatentAbilities(theta=mean + eps @ post.chol.T)


def sample_threshold_propensities(y: np.ndarray, a: np.ndarray, b: np.ndarray,
                                  tau: np.ndarray, theta: np.ndarray,
                                  rng: np.random.Generator) -> np.ndarray:
    """Draw x_ijk ~ N(eta_ijk, 1) truncated to (0, inf) when y_ij >= k and
    to (-inf, 0) otherwise, for thresholds k = 1..K-1."""
    km1 = tau.shape[1]
    if km1 < 2:
        raise CalledWithDichotomous("K=2 bypasses the threshold-propensity step")
    eta = theta @ a.T  # N x J
    eta = eta[:, :, None] - (b[:, None] + tau)[None, :, :]  # N x J x (K-1)
    above = y[:, :, None] >= np.arange(1, km1 + 1)[None, None, :]
    lower = np.where(above, -eta, -np.inf)
    upper = np.where(above, np.inf, -eta)
    draws = _sample_std_truncnorm(np.ravel(lower), np.ravel(upper), rng)
    return eta + draws.reshape(eta.shape)


def update_intercepts_from_x(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intercepts and decentered thresholds from threshold propensities:
    b_j = -mean_{i,k} x_ijk, tau_jk = -mean_i x_ijk - b_j."""
    xbar = x.mean(axis=0)  # J x (K-1)
    b = -xbar.mean(axis=1)
    tau = -xbar - b[:, None]
    return b, tau


def sample_ordinal_propensities(y: np.ndarray, a: np.ndarray, b: np.ndarray,
                                tau: np.ndarray, theta: np.ndarray,
                                rng: np.random.Generator) -> np.ndarray:
    """Draw the ordinal-information propensities z (N x J).

    K > 2: z ~ N(A theta, 1) truncated to the cut-point interval selected by
    y.  K = 2: the single-threshold case, z = x ~ N(A theta - b, 1) truncated
    at 0 by y (the two laws coincide up to the location shift b).
    """
    d = b[:, None] + tau  # J x (K-1)
    if d.shape[1] > 1 and np.any(np.diff(d, axis=1) <= 0):
        raise NonMonotoneThresholds("cut points must be strictly increasing")
    eta = theta @ a.T
    if d.shape[1] == 1:
        eta = eta - b  # z = x: centered at A theta - b, truncated at 0
        lower = np.where(y >= 1, -eta, -np.inf)
        upper = np.where(y >= 1, np.inf, -eta)
    else:
        padded = np.concatenate(
            [np.full((d.shape[0], 1), -np.inf), d, np.full((d.shape[0], 1), np.inf)],
            axis=1,
        )
        cols = np.arange(d.shape[0])[None, :]
        lower = padded[cols, y] - eta
        upper = padded[cols, y + 1] - eta
    draws = _sample_std_truncnorm(np.ravel(lower), np.ravel(upper), rng)
    return eta + draws.reshape(eta.shape)


def classify_knowledge(y: np.ndarray, eta: np.ndarray, g: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Attribute each correct response to knowledge (W=1) or guessing (W=0):
    P(W=1 | Y=1) = Phi(eta) / (Phi(eta) + g (1 - Phi(eta)))."""
    p = ndtr(eta)
    p_know = p / (p + g * (1.0 - p))
    w = (y == 1) & (rng.random(y.shape) < p_know)
    return w.astype(np.int8)


def update_guessing(y: np.ndarray, w: np.ndarray,
                    previous: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-item guessing rate among non-knowers: g_j = sum_{i: W=0} Y_ij / #{W=0}.

    Items where everyone knows keep their previous value (error without one).
    """
    not_know = w == 0
    denom = not_know.sum(axis=0)
    numer = (y * not_know).sum(axis=0)
    g = np.empty(y.shape[1])
    ok = denom > 0
    g[ok] = numer[ok] / denom[ok]
    if np.any(~ok):
        if previous is None:
            raise NoNonKnowers("no non-knowers for some item and no previous g")
        g[~ok] = previous[~ok]
    return g


def compute_sufficient_stats(z: np.ndarray, b: np.ndarray) -> SufficientStatistics:
    """S1 = mean of z; S2 = n^-1 sum (z_i + b)(z_i + b)^T."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    s1 = z.mean(axis=0)
    zc = z + b
    s2 = (zc.T @ zc) / n
    s2 = 0.5 * (s2 + s2.T)
    return SufficientStatistics(s1=s1, s2=s2)
