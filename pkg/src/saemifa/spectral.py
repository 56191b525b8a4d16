"""Random-matrix dimensionality machinery.

Null model: eigenvalues of a normalized Wishart matrix S = (1/N) V^T V with
V an N x J matrix of standard normals.  The bulk follows the
Marchenko-Pastur law with ratio c = J/N; the centered/scaled largest
eigenvalue follows the Tracy-Widom beta=1 law, evaluated from a packaged
table built by :mod:`saemifa.painleve`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np


class InvalidRatio(ValueError):
    """Marchenko-Pastur ratio c must lie in (0, 1]."""


class NonPositiveDiagonal(ValueError):
    """Correlation rescaling requires a strictly positive diagonal."""


class FitterFailure(RuntimeError):
    """A dimensionality fit requested by retain_dimensions failed."""


class OutOfTableRange(UserWarning):
    """Tracy-Widom argument fell outside the tabulated range; clamped."""


@dataclass(frozen=True)
class SpectralConfig:
    n_items: int
    n_examinees: int
    alpha: float = 0.001

    def __post_init__(self):
        if not (1 <= self.n_items <= self.n_examinees):
            raise ValueError("requires N >= J >= 1")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def ratio(self) -> float:
        return self.n_items / self.n_examinees


@dataclass(frozen=True)
class MPBounds:
    lower: float
    upper: float


@dataclass(frozen=True)
class TWScaling:
    mu_j: float
    sigma_j: float


@dataclass
class RetentionState:
    """Trajectory entry of the factor-retention loop."""

    lambda_hat: int
    lambda_s: int
    lambda_c: int
    d_f: int


def sample_wishart_eigenvalues(j: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvalues (descending) of (1/N) V^T V over N standard-normal J-vectors."""
    if n < j:
        raise ValueError("requires N >= J")
    v = rng.standard_normal((n, j))
    s = (v.T @ v) / n
    return np.linalg.eigvalsh(s)[::-1]


def mp_bounds(c: float) -> MPBounds:
    if not (0 < c <= 1):
        raise InvalidRatio("c must lie in (0, 1]")
    rt = np.sqrt(c)
    return MPBounds(lower=(1 - rt) ** 2, upper=(1 + rt) ** 2)


def mp_density(x, c: float):
    """Marchenko-Pastur density (1/(2 pi c x)) sqrt((x - l-)(l+ - x)) on its support."""
    bounds = mp_bounds(c)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > bounds.lower) & (x < bounds.upper)
    xi = x[inside]
    out[inside] = np.sqrt((xi - bounds.lower) * (bounds.upper - xi)) / (2 * np.pi * c * xi)
    return out if out.ndim else float(out)


def mp_cdf(x, c: float, grid_points: int = 20001):
    """Marchenko-Pastur CDF by dense trapezoid integration of the density."""
    bounds = mp_bounds(c)
    grid = np.linspace(bounds.lower, bounds.upper, grid_points)
    dens = mp_density(grid, c)
    cum = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * np.diff(grid))])
    cum /= cum[-1]
    x = np.asarray(x, dtype=float)
    out = np.interp(x, grid, cum, left=0.0, right=1.0)
    return out if out.ndim else float(out)


def tw_scaling(j: int, n: int) -> TWScaling:
    """Centering/scaling of the largest Wishart eigenvalue (unnormalized)."""
    if n < 2:
        raise ValueError("requires N >= 2")
    rn, rj = np.sqrt(n - 1), np.sqrt(j)
    mu = (rn + rj) ** 2
    sigma = (rn + rj) * (1.0 / rn + 1.0 / rj) ** (1.0 / 3.0)
    return TWScaling(mu_j=float(mu), sigma_j=float(sigma))


_TW_TABLE = None


def _tw_table():
    global _TW_TABLE
    if _TW_TABLE is None:
        with resources.files("saemifa").joinpath("data/tw_f1.npz").open("rb") as fh:
            data = np.load(fh)
            _TW_TABLE = (data["s"].copy(), data["f1"].copy())
    return _TW_TABLE


def tw_cdf(s):
    """Tracy-Widom beta=1 CDF from the packaged table (clamps out of range)."""
    grid, f1 = _tw_table()
    s = np.asarray(s, dtype=float)
    if np.any(s < grid[0]) or np.any(s > grid[-1]):
        warnings.warn("argument outside the tabulated range; clamped", OutOfTableRange)
    out = np.interp(s, grid, f1, left=f1[0], right=f1[-1])
    return out if out.ndim else float(out)


def tw_quantile(p):
    """Inverse of tw_cdf by monotone interpolation."""
    grid, f1 = _tw_table()
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("p must lie in (0, 1)")
    keep = (f1 > 1e-14) & (f1 < 1 - 1e-14)
    ff, ss = f1[keep], grid[keep]
    inc = np.concatenate([[True], np.diff(ff) > 0])
    out = np.interp(p, ff[inc], ss[inc])
    return out if out.ndim else float(out)


def tw_mean() -> float:
    """Mean of the tabulated Tracy-Widom beta=1 density."""
    grid, f1 = _tw_table()
    dens = np.gradient(f1, grid)
    return float(np.trapezoid(grid * dens, grid))


def significant_eigenvalues(eigs, j: int, n: int, alpha: float = 0.001) -> int:
    """Count of leading eigenvalues significant under the Tracy-Widom test.

    Eigenvalues come from a normalized (trace ~ J) J x J covariance or
    correlation with N degrees of freedom; each is unnormalized by N and
    centered/scaled per tw_scaling before comparison with the 1-alpha
    quantile.  Counting stops at the first non-significant eigenvalue.
    """
    eigs = np.sort(np.asarray(eigs, dtype=float))[::-1]
    sc = tw_scaling(j, n)
    crit = tw_quantile(1.0 - alpha)
    stats = (n * eigs - sc.mu_j) / sc.sigma_j
    count = 0
    for stat in stats:
        if stat > crit:
            count += 1
        else:
            break
    return count


def cov_to_corr(s2: np.ndarray) -> np.ndarray:
    """Rescale a covariance matrix to a correlation matrix."""
    d = np.diag(s2)
    if np.any(d <= 0):
        raise NonPositiveDiagonal("covariance diagonal must be strictly positive")
    scale = 1.0 / np.sqrt(d)
    r = s2 * scale[:, None] * scale[None, :]
    np.fill_diagonal(r, 1.0)
    return r


def eigenvalue_ratios(eigs) -> np.ndarray:
    """Adjacent eigenvalue ratios r_k = lambda_k / lambda_{k+1}."""
    eigs = np.asarray(eigs, dtype=float)
    if eigs.size < 2:
        raise ValueError("need at least two eigenvalues")
    return eigs[:-1] / eigs[1:]


def retain_dimensions(fitter: Callable[[int], np.ndarray], j: int, n: int,
                      alpha: float = 0.001, history: Optional[list] = None):
    """Iterative factor-retention loop.

    `fitter(q)` must run a full fit at dimensionality q and return the
    converged S2.  Starting from one configured dimension, the loop escalates
    to the significant correlation count Lambda_C, then the significant
    covariance count Lambda_S; it stops returning (Lambda_C, 0) when the
    counts agree, (Lambda_C, d_f) when the gap d_f = Lambda_S - Lambda_C
    repeats (a persistent weak-factor signal), and otherwise retries at
    Lambda_S - 1.
    """
    lam_hat = 1
    d_prev: Optional[int] = None  # "infinity" sentinel on the first pass
    for _ in range(j + 2):
        try:
            s2 = np.asarray(fitter(lam_hat), dtype=float)
        except Exception as exc:
            raise FitterFailure(f"fit at q={lam_hat} failed: {exc}") from exc
        cov_eigs = np.linalg.eigvalsh(s2)[::-1]
        corr_eigs = np.linalg.eigvalsh(cov_to_corr(s2))[::-1]
        lam_s = significant_eigenvalues(cov_eigs, j, n, alpha)
        lam_c = significant_eigenvalues(corr_eigs, j, n, alpha)
        d_f = lam_s - lam_c
        if history is not None:
            history.append(RetentionState(lambda_hat=lam_hat, lambda_s=lam_s,
                                          lambda_c=lam_c, d_f=d_f))
        if lam_c > lam_hat:
            d_prev, lam_hat = d_f, lam_c
            continue
        if lam_s > lam_hat:
            d_prev, lam_hat = d_f, lam_s
            continue
        if d_f == 0:
            return lam_c, 0
        if d_prev is not None and d_f == d_prev:
            return lam_c, d_f
        d_prev, lam_hat = d_f, max(lam_s - 1, 1)
    raise RuntimeError("retention loop exceeded its iteration bound")
