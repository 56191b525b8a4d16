"""Seedable random streams and the samplers the estimation loop needs.

The truncated normal is the workhorse: inverse-CDF in the central regime,
exponential rejection (Robert's method) when the interval sits more than
TAIL_CUTOFF standard deviations into a tail, where naive inversion loses
precision.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

TAIL_CUTOFF = 4.0
_MAX_REJECTION_ROUNDS = 10_000


class EmptyInterval(ValueError):
    """Raised when a truncation interval has lower >= upper."""


class InvalidShape(ValueError):
    """Raised for non-positive beta shape parameters or min >= max."""


class NotSPD(ValueError):
    """Raised when a covariance matrix is not symmetric positive definite."""


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by (master_seed, stream_id).

    Distinct stream ids give statistically independent generators; the same
    pair always reproduces the same sequence, across runs and worker counts.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))

    def children(self, n: int) -> list["RngStream"]:
        """Derive n worker streams from this one."""
        base = self.stream_id * 10_000 + 1
        return [RngStream(self.master_seed, base + i) for i in range(n)]


def normal_cdf(x):
    """Standard normal CDF Phi(x)."""
    return ndtr(x)


def normal_quantile(p):
    """Standard normal quantile Phi^-1(p)."""
    return ndtri(p)


def _robert_tail(lo: np.ndarray, hi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample standard normals restricted to (lo, hi) with lo >= TAIL_CUTOFF.

    Robert's translated-exponential proposal; vectorized retry loop.
    """
    out = np.empty_like(lo)
    pending = np.arange(lo.size)
    alpha = 0.5 * (lo + np.sqrt(lo * lo + 4.0))
    for _ in range(_MAX_REJECTION_ROUNDS):
        m = pending.size
        if m == 0:
            break
        a = alpha[pending]
        z = lo[pending] + rng.exponential(1.0, size=m) / a
        accept = rng.random(m) <= np.exp(-0.5 * (z - a) ** 2)
        accept &= z < hi[pending]
        out[pending[accept]] = z[accept]
        pending = pending[~accept]
    if pending.size:  # pragma: no cover - defensive
        raise RuntimeError("tail rejection sampler failed to terminate")
    return out


def _sample_std_truncnorm(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal draws restricted to the open intervals (a, b)."""
    # Mirror intervals sitting in the upper half so Phi is always evaluated
    # away from 1, where doubles lose resolution.
    mid_finite = np.isfinite(a) & np.isfinite(b)
    with np.errstate(invalid="ignore"):  # -inf + inf in never-used slots
        flip = (a > 0) | (mid_finite & (a + b > 0))
    aa = np.where(flip, -b, a)
    bb = np.where(flip, -a, b)

    out = np.empty_like(aa)
    tail = bb < -TAIL_CUTOFF
    if np.any(tail):
        out[tail] = -_robert_tail(-bb[tail], -aa[tail], rng)
    central = ~tail
    if np.any(central):
        ua = ndtr(aa[central])
        ub = ndtr(bb[central])
        u = ua + rng.random(int(central.sum())) * (ub - ua)
        out[central] = ndtri(u)
    x = np.where(flip, -out, out)
    # keep draws strictly inside the open interval
    np.clip(x, np.nextafter(a, np.inf), np.nextafter(b, -np.inf), out=x)
    return x


def sample_truncated_normal(mean, sd, lower, upper, rng: np.random.Generator, size=None):
    """Draw from N(mean, sd^2) restricted to the open interval (lower, upper).

    All arguments broadcast; stable for |mean - bound|/sd well past 8.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    a = (np.asarray(lower, dtype=float) - mean) / sd
    b = (np.asarray(upper, dtype=float) - mean) / sd
    shape = np.broadcast_shapes(a.shape, b.shape) if size is None else size
    a, b = np.broadcast_arrays(a, b)
    a = np.broadcast_to(a, shape).astype(float)
    b = np.broadcast_to(b, shape).astype(float)
    if np.any(a >= b):
        raise EmptyInterval("truncation interval requires lower < upper")
    x = _sample_std_truncnorm(np.ravel(a).copy(), np.ravel(b).copy(), rng)
    return (mean + sd * x.reshape(shape)) if shape else float(mean + sd * x[0])


def sample_four_param_beta(shape1, shape2, lo, hi, rng: np.random.Generator, size=None):
    """Draw from the 4-parameter beta B4(shape1, shape2, lo, hi)."""
    if shape1 <= 0 or shape2 <= 0:
        raise InvalidShape("beta shape parameters must be positive")
    if lo >= hi:
        raise InvalidShape("support requires min < max")
    return lo + (hi - lo) * rng.beta(shape1, shape2, size=size)


def sample_mvn(mean, covariance, rng: np.random.Generator, size=None):
    """Draw from MVN(mean, covariance); covariance must be SPD within 1e-10."""
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NotSPD("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise NotSPD("covariance must be symmetric")
    scale = max(1.0, float(np.abs(cov).max()))
    if np.linalg.eigvalsh(cov).min() < -1e-10 * scale:
        raise NotSPD("covariance has a negative eigenvalue")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # PSD within tolerance but numerically singular: tiny jitter
        chol = np.linalg.cholesky(cov + 1e-12 * scale * np.eye(cov.shape[0]))
    q = mean.shape[-1] if mean.ndim else cov.shape[0]
    if size is None:
        return mean + chol @ rng.standard_normal(q)
    z = rng.standard_normal((size, q))
    return mean + z @ chol.T
