"""Core data structures for item factor analysis runs.

Everything here is a value object: estimation code builds new instances
instead of mutating them.  The response model is a probit graded response
model, P(Y >= k | theta) = Phi(A_j theta - (b_j + tau_jk)), with an optional
guessing floor for dichotomous items.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import ndtr

DECENTER_TOL = 1e-8


class NonRectangular(ValueError):
    """Raised when the raw response input is not a rectangular integer matrix."""


class EntryOutOfRange(ValueError):
    """Raised when a response code is negative or otherwise out of range."""


class DegenerateItem(ValueError):
    """Raised when an item shows a single observed category (zero information)."""


class DimensionMismatch(ValueError):
    """Raised when array shapes disagree."""


@dataclass(frozen=True)
class ResponseMatrix:
    """N x J matrix of ordinal response codes in {0, ..., K-1}.

    v1 requires a uniform category count K across items; mixed formats are a
    documented extension point.
    """

    data: np.ndarray
    n_categories: int

    @property
    def n_examinees(self) -> int:
        return self.data.shape[0]

    @property
    def n_items(self) -> int:
        return self.data.shape[1]


def validate_response_matrix(raw) -> ResponseMatrix:
    """Validate raw integer responses and infer K = 1 + max entry.

    Rejects ragged input, non-integers, negative codes, and constant columns.
    """
    try:
        arr = np.asarray(raw)
    except ValueError as exc:  # ragged nested sequences
        raise NonRectangular(str(exc)) from None
    if arr.dtype == object or arr.ndim != 2 or arr.size == 0:
        raise NonRectangular(f"expected a rectangular N x J matrix, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == np.floor(arr)):
            arr = arr.astype(np.int64)
        else:
            raise EntryOutOfRange("response codes must be integers")
    if arr.min() < 0:
        raise EntryOutOfRange(f"negative response code {arr.min()}")
    k = int(arr.max()) + 1
    if k < 2:
        raise DegenerateItem("all responses identical; no item carries information")
    counts = np.array([np.unique(col).size for col in arr.T])
    if np.any(counts < 2):
        bad = int(np.argmin(counts))
        raise DegenerateItem(f"item {bad} has a single observed category")
    return ResponseMatrix(data=np.ascontiguousarray(arr, dtype=np.int64), n_categories=k)


@dataclass(frozen=True)
class ItemParameters:
    """Structural parameters: loadings A (J x Q), intercepts b (J,),
    decentered thresholds tau (J x (K-1)), optional guessing g (J,)."""

    loadings: np.ndarray
    intercepts: np.ndarray
    thresholds: np.ndarray
    guessing: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.loadings, dtype=float)
        b = np.asarray(self.intercepts, dtype=float)
        t = np.asarray(self.thresholds, dtype=float)
        if a.ndim != 2 or b.ndim != 1 or t.ndim != 2:
            raise DimensionMismatch("loadings must be J x Q, intercepts J, thresholds J x (K-1)")
        j = a.shape[0]
        if b.shape[0] != j or t.shape[0] != j:
            raise DimensionMismatch("row counts of loadings/intercepts/thresholds disagree")
        if np.max(np.abs(t.sum(axis=1)), initial=0.0) > DECENTER_TOL:
            raise ValueError("thresholds are not decentered: sum_k tau_jk != 0")
        if self.guessing is not None:
            g = np.asarray(self.guessing, dtype=float)
            if t.shape[1] != 1:
                raise ValueError("guessing parameters require dichotomous items (K=2)")
            if g.shape != (j,) or np.any(g < 0) or np.any(g >= 1):
                raise EntryOutOfRange("guessing must be a J-vector in [0,1)")
            object.__setattr__(self, "guessing", g)
        object.__setattr__(self, "loadings", a)
        object.__setattr__(self, "intercepts", b)
        object.__setattr__(self, "thresholds", t)

    @property
    def n_items(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    @property
    def n_categories(self) -> int:
        return self.thresholds.shape[1] + 1

    def cutpoints(self) -> np.ndarray:
        """Category cut points d_jk = b_j + tau_jk, shape (J, K-1)."""
        return self.intercepts[:, None] + self.thresholds

    def with_loadings(self, loadings: np.ndarray) -> "ItemParameters":
        return replace(self, loadings=np.asarray(loadings, dtype=float))


@dataclass(frozen=True)
class LatentAbilities:
    """N x Q matrix of factor scores; prior is MVN(0, I) by identification."""

    theta: np.ndarray

    @property
    def n_examinees(self) -> int:
        return self.theta.shape[0]

    @property
    def n_factors(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class AugmentedData:
    """Latent propensities from one Gibbs cycle.

    z: N x J ordinal-information propensities; x: N x J x (K-1) threshold
    propensities (absent when K=2 where x = z); w: optional knowledge
    indicators for the guessing model.
    """

    z: np.ndarray
    x: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SufficientStatistics:
    """S1 (mean propensity), S2 (the covariance whose eigenstructure carries
    the loadings), and mu (threshold statistics)."""

    s1: np.ndarray
    s2: np.ndarray
    mu: Optional[np.ndarray] = None

    def __post_init__(self):
        s2 = np.asarray(self.s2, dtype=float)
        if not np.allclose(s2, s2.T, atol=1e-10):
            raise ValueError("s2 must be symmetric")
        # cheap PSD check: eigenvalues above -1e-8 relative to scale
        scale = max(1.0, float(np.abs(s2).max()))
        if np.linalg.eigvalsh(s2).min() < -1e-8 * scale:
            raise ValueError("s2 must be positive semi-definite within tolerance")


@dataclass(frozen=True)
class GainSchedule:
    """Robbins-Monro gain schedule with a pseudo-annealing window.

    gamma_t = 1 through burn-in, random fractional gains inside the trailing
    anneal window, then (1/t')^alpha once RM engages (t' = t - burn_in + 1).
    """

    burn_in: int
    anneal_window: Optional[int] = None
    alpha: float = 1.0

    def __post_init__(self):
        if self.burn_in < 1:
            raise ValueError("burn_in must be >= 1")
        if self.anneal_window is None:
            object.__setattr__(self, "anneal_window", max(1, round(0.2 * self.burn_in)))
        if not (0 < self.anneal_window <= self.burn_in):
            raise ValueError("anneal_window must lie inside the burn-in")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class ConvergenceConfig:
    """Trace-based stopping rule: |delta trace(Sigma)| < epsilon for `window`
    consecutive RM iterations."""

    epsilon: float = 1e-4
    window: int = 3
    max_iterations: int = 5000

    def __post_init__(self):
        if not (1e-6 <= self.epsilon <= 1e-2):
            raise ValueError("epsilon must lie in [1e-6, 1e-2]")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def category_probabilities(theta: np.ndarray, params: ItemParameters) -> np.ndarray:
    """P(Y_ij = k) for every examinee/item/category, shape (N, J, K).

    Graded probit model: P(Y >= k) = Phi(A_j theta_i - d_jk) with cut points
    d_jk = b_j + tau_jk; category probabilities are successive differences.
    The dichotomous guessing variant lifts P(Y=1) to g + (1-g) Phi(eta).
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    eta = theta @ params.loadings.T  # (N, J)
    d = params.cutpoints()  # (J, K-1)
    upper = ndtr(eta[:, :, None] - d[None, :, :])  # P(Y >= k), k = 1..K-1
    n, j = eta.shape
    k = params.n_categories
    probs = np.empty((n, j, k))
    prev = np.ones((n, j))
    for kk in range(k - 1):
        probs[:, :, kk] = prev - upper[:, :, kk]
        prev = upper[:, :, kk]
    probs[:, :, k - 1] = prev
    if params.guessing is not None:
        p1 = params.guessing[None, :] + (1.0 - params.guessing[None, :]) * upper[:, :, 0]
        probs[:, :, 1] = p1
        probs[:, :, 0] = 1.0 - p1
    return probs
