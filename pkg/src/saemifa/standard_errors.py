"""Standard errors for the structural parameters.

Two families:

* Louis missing-information Hessians (ICE during convergence, SPCE from a
  single post-convergence draw, IPCE from a 2000-cycle post-convergence
  chain), in ogive and logistic variants.  The parameter block is the
  per-item (a_1..a_Q, b) vector; H = D + (G - Delta Delta^T) and
  SE = sqrt(diag((-H)^{-1})), with negative variances flagged rather than
  clamped.
* Chain methods on parameter chains recorded over the final 20% of burn-in
  before annealing: per-chain sd after thinning (MCMC), Geyer
  initial-positive-sequence asymptotic sd per parameter within item blocks
  (CLT_I), and batch-means asymptotic sd over the full joint chain (CLT_F).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit

LOGISTIC_SCALE = 1.7
IPCE_CYCLES = 2000


class SingularHessian(ValueError):
    """The assembled Hessian could not be inverted."""


class ChainTooShort(ValueError):
    """Recorded chains are too short for the requested estimator."""


@dataclass(frozen=True)
class LouisAccumulators:
    """RM averages of the complete-data second derivatives (D), score outer
    products (G), and scores (Delta) over the full structural block."""

    d: np.ndarray  # P x P
    g: np.ndarray  # P x P
    delta: np.ndarray  # P
    n_items: int
    n_factors: int

    @classmethod
    def empty(cls, j: int, q: int) -> "LouisAccumulators":
        p = j * (q + 1)
        return cls(d=np.zeros((p, p)), g=np.zeros((p, p)), delta=np.zeros(p),
                   n_items=j, n_factors=q)


@dataclass(frozen=True)
class ErrorReport:
    method: str
    se: np.ndarray
    negative_variance_flags: np.ndarray
    names: list


def _param_names(j: int, q: int) -> list:
    names = []
    for jj in range(j):
        names.extend(f"a[{jj},{qq}]" for qq in range(q))
        names.append(f"b[{jj}]")
    return names


def complete_data_loglik(a, b, theta, z, y=None, link: str = "ogive") -> float:
    """Complete-data log likelihood of the structural parameters.

    Ogive: Gaussian likelihood of the augmented propensities,
    -1/2 sum (z_ij - (A_j theta_i - b_j))^2 (constants dropped).
    Logistic: Bernoulli likelihood of y given theta with
    P = sigmoid(LOGISTIC_SCALE * (A_j theta_i - b_j)).
    """
    eta = theta @ a.T - b
    if link == "ogive":
        r = z - eta
        return float(-0.5 * np.sum(r * r))
    if link == "logistic":
        s = LOGISTIC_SCALE * eta
        return float(np.sum(y * log_expit(s) + (1 - y) * log_expit(-s)))
    raise ValueError(f"unknown link {link!r}")


def complete_data_derivatives(a, b, theta, z, y=None, link: str = "ogive"):
    """Per-item gradient (J, Q+1) and Hessian blocks (J, Q+1, Q+1).

    Parameter order within an item is (a_1..a_Q, b).  The logistic variant
    differentiates with respect to the logistic-metric parameters
    (1.7 a, 1.7 b); callers map the resulting SEs back by dividing by 1.7.
    """
    a = np.asarray(a, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, q = theta.shape
    j = a.shape[0]
    grad = np.empty((j, q + 1))
    hess = np.empty((j, q + 1, q + 1))
    eta = theta @ a.T - b
    if link == "ogive":
        r = z - eta  # N x J
        grad[:, :q] = r.T @ theta
        grad[:, q] = -r.sum(axis=0)
        block = np.empty((q + 1, q + 1))
        block[:q, :q] = -theta.T @ theta
        block[:q, q] = theta.sum(axis=0)
        block[q, :q] = block[:q, q]
        block[q, q] = -n
        hess[:] = block  # identical for every item
        return grad, hess
    if link == "logistic":
        p = expit(LOGISTIC_SCALE * eta)
        s = y - p  # N x J
        w = p * (1.0 - p)
        grad[:, :q] = s.T @ theta
        grad[:, q] = -s.sum(axis=0)
        # per-item weighted moments of theta
        wt = np.einsum("ij,iq,ir->jqr", w, theta, theta)
        wth = w.T @ theta  # J x Q
        hess[:, :q, :q] = -wt
        hess[:, :q, q] = wth
        hess[:, q, :q] = wth
        hess[:, q, q] = -w.sum(axis=0)
        return grad, hess
    raise ValueError(f"unknown link {link!r}")


def _assemble(grad: np.ndarray, hess: np.ndarray):
    """Flatten per-item derivatives into the joint block vector/matrix."""
    j, p1 = grad.shape
    p = j * p1
    flat_grad = grad.ravel()
    full = np.zeros((p, p))
    for jj in range(j):
        s = slice(jj * p1, (jj + 1) * p1)
        full[s, s] = hess[jj]
    return flat_grad, full


def louis_update(acc: LouisAccumulators, derivs, gamma: float) -> LouisAccumulators:
    """One RM step of the Louis accumulators from a (gradient, hessian) pair."""
    grad, hess = derivs
    flat_grad, full_hess = _assemble(grad, hess)
    d = acc.d + gamma * (full_hess - acc.d)
    g = acc.g + gamma * (np.outer(flat_grad, flat_grad) - acc.g)
    delta = acc.delta + gamma * (flat_grad - acc.delta)
    return LouisAccumulators(d=d, g=g, delta=delta,
                             n_items=acc.n_items, n_factors=acc.n_factors)


def finalize_hessian(acc: LouisAccumulators, method: str = "ICE",
                     link: str = "ogive"):
    """H = D + (G - Delta Delta^T); SE = sqrt(diag((-H)^{-1})).

    Negative inverted variances are flagged (se = nan there), not clamped.
    """
    h = acc.d + (acc.g - np.outer(acc.delta, acc.delta))
    try:
        cov = np.linalg.inv(-h)
    except np.linalg.LinAlgError as exc:
        raise SingularHessian(str(exc)) from None
    if not np.all(np.isfinite(cov)):
        raise SingularHessian("non-finite Hessian inverse")
    var = np.diag(cov).copy()
    flags = var <= 0
    se = np.where(flags, np.nan, np.sqrt(np.abs(var)))
    if link == "logistic":
        se = se / LOGISTIC_SCALE
    report = ErrorReport(method=method, se=se, negative_variance_flags=flags,
                         names=_param_names(acc.n_items, acc.n_factors))
    return h, report


def _procrustes_align(a: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Orthogonal rotation of the columns of `a` closest to `target`."""
    u, _, vt = np.linalg.svd(target.T @ a)
    return a @ (u @ vt).T


def estimate_hessian_errors(fit, y, mode: str, link: str = "ogive",
                            rng: Optional[np.random.Generator] = None,
                            n_cycles: int = IPCE_CYCLES,
                            workers: int = 1) -> ErrorReport:
    """Hessian-based SEs at a converged fit: ICE, SPCE, or IPCE."""
    from .engine import GibbsSampler  # local import to avoid a cycle
    from .gibbs import posterior_theta_params, sample_abilities
    from .model import ResponseMatrix, validate_response_matrix

    if y is not None and not isinstance(y, ResponseMatrix):
        y = validate_response_matrix(y)
    params = fit.parameters
    j, q = params.n_items, params.n_factors
    if params.n_categories != 2:
        raise ValueError("Hessian SEs are implemented for dichotomous models")
    if rng is None:
        rng = np.random.default_rng(0)
    mode = mode.upper()

    if mode == "ICE":
        if link != "ogive":
            raise ValueError("ICE accumulators are recorded under the ogive link")
        if fit.louis is None:
            raise ValueError("fit was run without track_errors=True")
        _, report = finalize_hessian(fit.louis, method="ICE", link="ogive")
        return report

    a, b = params.loadings, params.intercepts
    if mode == "SPCE":
        post = posterior_theta_params(a)
        b_for_theta = b  # dichotomous z is stored in the A*theta - b form
        theta = sample_abilities(fit.z, a, b_for_theta, rng, post=post).theta
        yy = y.data if y is not None else None
        _, hess = complete_data_derivatives(a, b, theta, fit.z, y=yy, link=link)
        acc = LouisAccumulators.empty(j, q)
        acc = louis_update(acc, (np.zeros((j, q + 1)), hess), 1.0)
        _, report = finalize_hessian(acc, method=f"SPCE_{link[0].upper()}", link=link)
        return report

    if mode == "IPCE":
        if y is None:
            raise ValueError("IPCE requires the response matrix")
        sampler = GibbsSampler(y, q, fit.model,
                               [rng],
                               params=params, theta=fit.theta)
        sampler.z = fit.z.copy()
        acc = LouisAccumulators.empty(j, q)
        for t in range(1, n_cycles + 1):
            sampler.cycle(1.0)  # gamma stays 1 for the chain itself
            a_t = sampler.a
            if q > 1:
                a_t = _procrustes_align(a_t, params.loadings)
            yy = sampler.w if fit.model == "3PNO" else sampler.yobs
            grad, hess = complete_data_derivatives(
                a_t, sampler.b, sampler.theta, sampler.z, y=yy, link=link)
            acc = louis_update(acc, (grad, hess), 1.0 / t)
        _, report = finalize_hessian(acc, method=f"IPCE_{link[0].upper()}", link=link)
        return report

    raise ValueError(f"unknown mode {mode!r}")


def autocovariance(chain: np.ndarray, lag: int) -> float:
    """Biased autocovariance estimate at the given lag."""
    chain = np.asarray(chain, dtype=float)
    n = chain.size
    if lag >= n:
        raise ValueError("lag must be smaller than the chain length")
    c = chain - chain.mean()
    return float(np.dot(c[: n - lag], c[lag:]) / n)


def select_thinning_lag(chain: np.ndarray, max_lag: Optional[int] = None) -> int:
    """Smallest lag whose autocorrelation is inside the +-2/sqrt(n) noise band."""
    chain = np.asarray(chain, dtype=float)
    n = chain.size
    var = autocovariance(chain, 0)
    if var <= 0:
        import warnings
        warnings.warn("zero-variance chain; thinning lag defaults to 1")
        return 1
    band = 2.0 / np.sqrt(n)
    if max_lag is None:
        max_lag = n // 2
    for lag in range(1, max_lag + 1):
        if abs(autocovariance(chain, lag) / var) < band:
            return lag
    return max_lag


def _geyer_ips_variance(chain: np.ndarray) -> float:
    """Initial-positive-sequence estimate of the asymptotic variance."""
    n = chain.size
    gamma0 = autocovariance(chain, 0)
    if gamma0 <= 0:
        return 0.0
    total = -gamma0
    m = 0
    while True:
        k1, k2 = 2 * m, 2 * m + 1
        if k2 >= n - 1:
            break
        pair = autocovariance(chain, k1) + autocovariance(chain, k2)
        if pair <= 0:
            break
        total += 2.0 * pair
        m += 1
    return max(total, 0.0)


def _batch_means_variance(values: np.ndarray) -> np.ndarray:
    """Batch-means asymptotic variances, one per column of the joint chain."""
    n = values.shape[0]
    n_batches = max(2, int(np.sqrt(n)))
    size = n // n_batches
    trimmed = values[: n_batches * size]
    means = trimmed.reshape(n_batches, size, -1).mean(axis=1)
    return size * means.var(axis=0, ddof=1)


def mcmc_chain_errors(chains, mode: str) -> ErrorReport:
    """Chain-based SEs from burn-in parameter chains.

    MCMC: per-chain sd after thinning.  CLT_I: Geyer initial-positive-sequence
    asymptotic sd per parameter within item blocks.  CLT_F: batch-means
    asymptotic sd over the full joint chain.  All on the marginal sd scale.
    """
    values = chains.values if hasattr(chains, "values") else np.asarray(chains, dtype=float)
    names = list(chains.names) if hasattr(chains, "names") else [
        f"p[{i}]" for i in range(values.shape[1])]
    n, p = values.shape
    if n < 20:
        raise ChainTooShort(f"need >= 20 recorded iterations, have {n}")
    mode = mode.upper().replace("-", "_")
    if mode == "MCMC":
        se = np.empty(p)
        for i in range(p):
            lag = select_thinning_lag(values[:, i])
            se[i] = values[:, i][::lag].std(ddof=1)
    elif mode == "CLT_I":
        se = np.sqrt([_geyer_ips_variance(values[:, i]) for i in range(p)])
    elif mode == "CLT_F":
        se = np.sqrt(_batch_means_variance(values))
    else:
        raise ValueError(f"unknown chain method {mode!r}")
    flags = ~np.isfinite(se) | (se < 0)
    return ErrorReport(method=mode, se=se, negative_variance_flags=flags, names=names)
