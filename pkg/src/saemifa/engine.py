"""SAEM iteration control: initialization, burn-in, pseudo-annealing,
Robbins-Monro averaging, M-steps, and convergence.

The estimation alternates Gibbs draws of (theta, x, z[, W]) with closed-form
M-steps: intercepts/thresholds from the RM-averaged threshold statistics mu,
loadings from the eigendecomposition of the RM-averaged covariance Sigma - I.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .distributions import RngStream
from .gibbs import (
    classify_knowledge,
    posterior_theta_params,
    sample_abilities,
    sample_ordinal_propensities,
    sample_threshold_propensities,
    update_guessing,
)
from .model import (
    ConvergenceConfig,
    GainSchedule,
    ItemParameters,
    LatentAbilities,
    ResponseMatrix,
    category_probabilities,
    validate_response_matrix,
)

MODELS = ("2PNO", "3PNO", "graded")

GAIN_FLOOR = 1e-6


class AllEigenvaluesNonPositive(UserWarning):
    """Sigma - I carried no positive eigenvalue; loadings set to zero."""


class MaxIterationsExceeded(UserWarning):
    """The fit hit max_iterations before the trace stabilized."""


@dataclass
class ChainRecord:
    """Structural-parameter chains recorded over the pre-annealing window."""

    names: list
    item_index: np.ndarray  # item owning each column, for per-item methods
    values: np.ndarray  # iterations x parameters
    start_iteration: int


@dataclass
class FitResult:
    parameters: ItemParameters
    trace_history: np.ndarray
    iterations_used: int
    converged: bool
    sigma: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    model: str
    schedule: GainSchedule
    config: ConvergenceConfig
    gain_history: np.ndarray
    chain_snapshots: Optional[ChainRecord] = None
    louis: Optional[object] = None  # LouisAccumulators when tracked
    warnings: list = field(default_factory=list)

    @property
    def n_factors(self) -> int:
        return self.parameters.n_factors


def default_schedule(n_examinees: int) -> GainSchedule:
    """Burn-in length by sample size: 1000 up to N=10000, 300 past 50000."""
    if n_examinees <= 10_000:
        return GainSchedule(burn_in=1000)
    if n_examinees <= 50_000:
        return GainSchedule(burn_in=500)
    return GainSchedule(burn_in=300)


def initialize(y: ResponseMatrix, q: int, model: str = "2PNO"):
    """Starting values: unit loadings on the first dimension, intercepts from
    observed category frequencies, theta = 0 (guessing starts at 0.1)."""
    data = y.data
    n, j = data.shape
    k = y.n_categories
    a = np.zeros((j, q))
    a[:, 0] = 1.0
    floor = 1.0 / (2 * n)
    if k == 2:
        p = np.clip(data.mean(axis=0), floor, 1 - floor)
        b = -ndtri(p)
        tau = np.zeros((j, 1))
    else:
        # quantiles of the cumulative category frequencies
        prop = np.stack([(data >= kk).mean(axis=0) for kk in range(1, k)], axis=1)
        prop = np.clip(prop, floor, 1 - floor)
        d = -ndtri(prop)
        # noisy frequencies can tie; nudge into strict order
        d = np.maximum.accumulate(d + 1e-9 * np.arange(k - 1), axis=1)
        b = d.mean(axis=1)
        tau = d - b[:, None]
    g = np.full(j, 0.1) if model == "3PNO" else None
    params = ItemParameters(loadings=a, intercepts=b, thresholds=tau, guessing=g)
    return params, LatentAbilities(theta=np.zeros((n, q)))


def gain(t: int, schedule: GainSchedule, rng: Optional[np.random.Generator] = None) -> float:
    """RM gain: 1 through burn-in, annealed random fractions in the trailing
    window, then (1/t')^alpha starting at 1/2."""
    b, w = schedule.burn_in, schedule.anneal_window
    if t <= b - w:
        return 1.0
    if t <= b:
        wi = t - (b - w)
        amp = (wi / w) * np.cos(wi) ** 2
        if wi <= w / 2:
            lo, hi = 1.0 - amp, 1.0
        else:
            lo, hi = 0.5 - amp, 1.0 - amp
        lo = max(lo, GAIN_FLOOR)
        hi = max(hi, 2 * GAIN_FLOOR)
        if rng is None:
            raise ValueError("annealing-window gain requires an rng")
        return float(rng.uniform(lo, hi))
    return float((1.0 / (t - b + 1)) ** schedule.alpha)


def rm_update(s_prev, s_t, gamma: float):
    """Robbins-Monro recursion S_t = S_{t-1} + gamma (s_t - S_{t-1})."""
    return s_prev + gamma * (np.asarray(s_t) - s_prev)


def m_step_intercepts(mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intercepts and decentered thresholds from the threshold statistics."""
    b = -mu.mean(axis=1)
    tau = -mu - b[:, None]
    return b, tau


def m_step_loadings(sigma: np.ndarray, q: int) -> np.ndarray:
    """Loadings from the top-q eigenpairs of Sigma - I: A = V D^{1/2}.

    Negative eigenvalues clamp to zero; columns are sign-fixed so the
    largest-magnitude entry is positive.  If no eigenvalue is positive a
    zero matrix is returned under an AllEigenvaluesNonPositive warning.
    """
    sym = 0.5 * (sigma + sigma.T) - np.eye(sigma.shape[0])
    evals, evecs = np.linalg.eigh(sym)
    order = np.argsort(evals)[::-1][:q]
    d = evals[order]
    v = evecs[:, order]
    if np.all(d <= 0):
        warnings.warn("no positive eigenvalue in Sigma - I", AllEigenvaluesNonPositive)
        return np.zeros((sigma.shape[0], q))
    a = v * np.sqrt(np.clip(d, 0.0, None))
    flip = a[np.argmax(np.abs(a), axis=0), np.arange(q)] < 0
    a[:, flip] *= -1.0
    return a


def check_convergence(trace_history: Sequence[float], cfg: ConvergenceConfig) -> bool:
    """True iff the last `window` trace changes are all below epsilon."""
    if len(trace_history) < cfg.window + 1:
        return False
    tail = np.asarray(trace_history[-(cfg.window + 1):])
    return bool(np.all(np.abs(np.diff(tail)) < cfg.epsilon))


class GibbsSampler:
    """Mutable engine-owned state for one SAEM run.

    Draws are partitioned across worker streams by examinee block (theta)
    and item block (propensities); one worker is plain serial execution.
    """

    def __init__(self, y: ResponseMatrix, q: int, model: str,
                 worker_rngs: Sequence[np.random.Generator],
                 params: Optional[ItemParameters] = None,
                 theta: Optional[np.ndarray] = None):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        self.yobs = y.data
        self.k = y.n_categories
        self.n, self.j = self.yobs.shape
        self.q = q
        self.model = model
        if model == "3PNO" and self.k != 2:
            raise ValueError("the guessing model requires dichotomous items")
        self.rngs = list(worker_rngs)
        w = len(self.rngs)
        self.exam_blocks = np.array_split(np.arange(self.n), w)
        self.item_blocks = np.array_split(np.arange(self.j), w)
        if params is None:
            params, abilities = initialize(y, q, model)
            theta = abilities.theta
        self.a = params.loadings.copy()
        self.b = params.intercepts.copy()
        self.tau = params.thresholds.copy()
        self.g = params.guessing.copy() if params.guessing is not None else None
        self.theta = np.zeros((self.n, q)) if theta is None else theta.copy()
        self.z = np.zeros((self.n, self.j))
        self.x = None
        self.w = None
        self.mu = -(self.b[:, None] + self.tau)  # consistent with current (b, tau)
        self.sigma = np.eye(self.j)
        self.gstat = self.g.copy() if self.g is not None else None
        self.loading_warning = False

    def snapshot_params(self) -> ItemParameters:
        return ItemParameters(
            loadings=self.a.copy(), intercepts=self.b.copy(),
            thresholds=self.tau.copy(),
            guessing=self.g.copy() if self.g is not None else None)

    def cycle(self, gamma: float, update_params: bool = True) -> None:
        """One full S1-S2-S3-M1-M2 cycle with RM gain `gamma`."""
        post = posterior_theta_params(self.a)
        b_for_theta = self.b if self.k == 2 else np.zeros(self.j)
        for blk, rng in zip(self.exam_blocks, self.rngs):
            drawn = sample_abilities(self.z[blk], self.a, b_for_theta, rng, post=post)
            self.theta[blk] = drawn.theta

        if self.model == "3PNO":
            eta = self.theta @ self.a.T - self.b
            if self.w is None:
                self.w = np.zeros_like(self.yobs, dtype=np.int8)
            for blk, rng in zip(self.item_blocks, self.rngs):
                self.w[:, blk] = classify_knowledge(
                    self.yobs[:, blk], eta[:, blk], self.g[blk], rng)
            y_eff = self.w
        else:
            y_eff = self.yobs

        if self.k > 2:
            if self.x is None:
                self.x = np.empty((self.n, self.j, self.k - 1))
            for blk, rng in zip(self.item_blocks, self.rngs):
                self.x[:, blk, :] = sample_threshold_propensities(
                    self.yobs[:, blk], self.a[blk], self.b[blk], self.tau[blk],
                    self.theta, rng)
        for blk, rng in zip(self.item_blocks, self.rngs):
            self.z[:, blk] = sample_ordinal_propensities(
                y_eff[:, blk], self.a[blk], self.b[blk], self.tau[blk],
                self.theta, rng)

        # RM updates of the sufficient statistics
        if self.k == 2:
            xbar = self.z.mean(axis=0)[:, None]
            zc = self.z + self.b
        else:
            xbar = self.x.mean(axis=(0,))
            zc = self.z - self.z.mean(axis=0)
        self.mu += gamma * (xbar - self.mu)
        if self.k > 2:
            # keep cut points ordered: tau = -mu - b must increase in k
            self.mu = np.sort(self.mu, axis=1)[:, ::-1]
        s2 = zc.T @ zc
        s2 /= self.n
        self.sigma += gamma * (0.5 * (s2 + s2.T) - self.sigma)
        if self.model == "3PNO":
            ghat = update_guessing(self.yobs, self.w, previous=self.gstat)
            self.gstat += gamma * (ghat - self.gstat)

        if update_params:
            self.b, self.tau = m_step_intercepts(self.mu)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", AllEigenvaluesNonPositive)
                self.a = m_step_loadings(self.sigma, self.q)
                if caught:
                    self.loading_warning = True
            if self.model == "3PNO":
                self.g = np.clip(self.gstat, 0.0, 0.999)


def _chain_layout(j: int, q: int, k: int, model: str):
    """Column names and owning-item index for the recorded parameter chains."""
    names, items = [], []
    for jj in range(j):
        for qq in range(q):
            names.append(f"a[{jj},{qq}]")
            items.append(jj)
        names.append(f"b[{jj}]")
        items.append(jj)
        for kk in range(1, k - 1 + 1):
            if k > 2:
                names.append(f"tau[{jj},{kk}]")
                items.append(jj)
        if model == "3PNO":
            names.append(f"g[{jj}]")
            items.append(jj)
    return names, np.asarray(items)


def _flatten_params(s: GibbsSampler) -> np.ndarray:
    cols = [s.a, s.b[:, None]]
    if s.k > 2:
        cols.append(s.tau)
    if s.model == "3PNO":
        cols.append(s.g[:, None])
    return np.concatenate(cols, axis=1).ravel()


def _resolve_streams(rng, workers: int):
    """Normalize seed/stream input into (gain_rng, worker generators)."""
    if isinstance(rng, RngStream):
        stream = rng
    elif rng is None or isinstance(rng, (int, np.integer)):
        stream = RngStream(0 if rng is None else int(rng))
    elif isinstance(rng, np.random.Generator):
        # derive a stream from the generator for worker splitting
        stream = RngStream(int(rng.integers(2 ** 63)))
    else:
        raise TypeError("rng must be a seed, RngStream, or numpy Generator")
    children = stream.children(workers + 1)
    gain_rng = children[0].generator()
    worker_rngs = [c.generator() for c in children[1:]]
    return gain_rng, worker_rngs


def fit(y, q: int, model: str = "2PNO",
        schedule: Optional[GainSchedule] = None,
        cfg: Optional[ConvergenceConfig] = None,
        rng=None, workers: int = 1,
        track_errors: bool = False,
        record_chains: bool = True) -> FitResult:
    """Run SAEM to convergence and return the fitted parameters.

    `rng` may be an integer seed, an RngStream, or a numpy Generator.  With
    `track_errors` the Louis information accumulators are maintained through
    the RM phase (dichotomous models only), enabling ICE standard errors.
    """
    if not isinstance(y, ResponseMatrix):
        y = validate_response_matrix(y)
    if q < 1:
        raise ValueError("q must be >= 1")
    schedule = schedule or default_schedule(y.n_examinees)
    cfg = cfg or ConvergenceConfig(max_iterations=schedule.burn_in + 3000)
    gain_rng, worker_rngs = _resolve_streams(rng, workers)
    sampler = GibbsSampler(y, q, model, worker_rngs)

    b_t, w_k = schedule.burn_in, schedule.anneal_window
    rec_lo = b_t - 2 * w_k  # chains cover the 20% of burn-in before annealing
    rec_hi = b_t - w_k
    chain_rows = []
    trace, gains = [], []
    louis = None
    if track_errors:
        if y.n_categories != 2:
            raise ValueError("Louis accumulators are implemented for dichotomous models")
        from .standard_errors import LouisAccumulators
        louis = LouisAccumulators.empty(y.n_items, q)

    converged = False
    t = 0
    for t in range(1, cfg.max_iterations + 1):
        gamma = gain(t, schedule, gain_rng)
        sampler.cycle(gamma)
        gains.append(gamma)
        trace.append(float(np.trace(sampler.sigma)))
        if record_chains and rec_lo < t <= rec_hi:
            chain_rows.append(_flatten_params(sampler))
        if louis is not None and t > b_t:
            from .standard_errors import complete_data_derivatives, louis_update
            grad, hess = complete_data_derivatives(
                sampler.a, sampler.b, sampler.theta, sampler.z,
                y=sampler.w if sampler.model == "3PNO" else sampler.yobs,
                link="ogive")
            louis = louis_update(louis, (grad, hess), gamma)
        if t > b_t + cfg.window and check_convergence(trace[b_t:], cfg):
            converged = True
            break
    if not converged:
        warnings.warn("trace did not stabilize within max_iterations",
                      MaxIterationsExceeded)

    chains = None
    if chain_rows:
        names, item_index = _chain_layout(y.n_items, q, y.n_categories, model)
        chains = ChainRecord(names=names, item_index=item_index,
                             values=np.asarray(chain_rows),
                             start_iteration=rec_lo + 1)
    notes = []
    if sampler.loading_warning:
        notes.append("loading M-step hit an all-nonpositive spectrum at least once")
    return FitResult(
        parameters=sampler.snapshot_params(),
        trace_history=np.asarray(trace),
        iterations_used=t,
        converged=converged,
        sigma=sampler.sigma.copy(),
        mu=sampler.mu.copy(),
        theta=sampler.theta.copy(),
        z=sampler.z.copy(),
        model=model,
        schedule=schedule,
        config=cfg,
        gain_history=np.asarray(gains),
        chain_snapshots=chains,
        louis=louis,
        warnings=notes,
    )


def _quadrature_nodes(q: int, rng: Optional[np.random.Generator], n_draws: int):
    """Gauss-Hermite tensor grid for q <= 3, Monte Carlo draws above."""
    if q <= 3:
        per_dim = {1: 61, 2: 21, 3: 13}[q]
        x, w = np.polynomial.hermite_e.hermegauss(per_dim)
        w = w / w.sum()
        nodes = np.stack([g.ravel() for g in np.meshgrid(*([x] * q), indexing="ij")], axis=1)
        wts = np.prod(np.stack([g.ravel() for g in np.meshgrid(*([w] * q), indexing="ij")], axis=1), axis=1)
        return nodes, np.log(wts)
    if rng is None:
        rng = np.random.default_rng(0)
    n_draws = max(2000, n_draws)
    nodes = rng.standard_normal((n_draws, q))
    return nodes, np.full(n_draws, -np.log(n_draws))


def marginal_loglik(y: ResponseMatrix, params: ItemParameters,
                    rng: Optional[np.random.Generator] = None,
                    n_draws: int = 2000) -> float:
    """Marginal log likelihood of the response matrix under MVN(0, I) abilities."""
    q = params.n_factors
    nodes, logw = _quadrature_nodes(q, rng, n_draws)
    data = y.data
    n = data.shape[0]
    cols = np.arange(data.shape[1])
    acc = np.full((nodes.shape[0], n), -np.inf)
    probs = category_probabilities(nodes, params)  # M x J x K
    logp = np.log(np.clip(probs, 1e-300, None))
    for m in range(nodes.shape[0]):
        acc[m] = logw[m] + logp[m][cols, data].sum(axis=1)
    mmax = acc.max(axis=0)
    return float(np.sum(mmax + np.log(np.exp(acc - mmax).sum(axis=0))))


def compute_fit_statistics(y: ResponseMatrix, params: ItemParameters,
                           rng: Optional[np.random.Generator] = None,
                           n_draws: int = 2000) -> dict:
    """LogL/AIC/BIC with dof = J (Q + K - 1) + J [guessing]."""
    if not isinstance(y, ResponseMatrix):
        y = validate_response_matrix(y)
    j = params.n_items
    dof = j * (params.n_factors + params.n_categories - 1)
    if params.guessing is not None:
        dof += j
    logl = marginal_loglik(y, params, rng=rng, n_draws=n_draws)
    n = y.n_examinees
    return {
        "logl": logl,
        "aic": 2 * dof - 2 * logl,
        "bic": dof * float(np.log(n)) - 2 * logl,
        "dof": dof,
    }
