"""Loading rotations: gradient-projection target rotation (oblique) with
random restarts, and orthogonal varimax.

The gradient-projection algorithm follows the standard Bernaards-Jennrich
construction: minimize a rotation criterion over (oblique or orthogonal)
rotation matrices by projected gradient steps with step halving.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonConvergence(RuntimeError):
    """Gradient projection failed to reach the tolerance."""


@dataclass(frozen=True)
class TargetMask:
    """J x Q pattern of {zero, free} cells; True marks a free loading."""

    free: np.ndarray

    def __post_init__(self):
        free = np.asarray(self.free, dtype=bool)
        if free.ndim != 2:
            raise ValueError("mask must be J x Q")
        if np.any(~free.any(axis=0)):
            raise ValueError("every column needs at least one free entry")
        object.__setattr__(self, "free", free)


def rotation_matrix_2d(angle: float) -> np.ndarray:
    """Planar rotation [[cos, -sin], [sin, cos]]."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _planar_rotation(q: int, i: int, k: int, angle: float) -> np.ndarray:
    r = np.eye(q)
    block = rotation_matrix_2d(angle)
    r[np.ix_([i, k], [i, k])] = block
    return r


def _vgq_target(loadings: np.ndarray, zero_mask: np.ndarray):
    """Sum of squared loadings over mask-zero cells, and its gradient."""
    masked = loadings * zero_mask
    return float(np.sum(masked ** 2)), 2.0 * masked


def _vgq_varimax(loadings: np.ndarray, _unused=None):
    """Negated varimax criterion (minimization convention)."""
    sq = loadings ** 2
    centered = sq - sq.mean(axis=0)
    return float(-np.sum(sq * centered) / 4.0), -loadings * centered


def _gpa(a: np.ndarray, vgq, arg, orthogonal: bool, t0=None,
         tol: float = 1e-8, max_iter: int = 500):
    """Gradient projection over rotation matrices.

    Returns (L, T, loss, converged); `converged` is True when the projected
    gradient norm fell below `tol`.
    """
    q = a.shape[1]
    t = np.eye(q) if t0 is None else t0.copy()

    def loadings_for(tm):
        return a @ tm if orthogonal else a @ np.linalg.inv(tm).T

    def criterion_grad(tm, loadings_, gq_):
        if orthogonal:
            return a.T @ gq_
        return -np.linalg.solve(tm.T, gq_.T @ loadings_)

    loadings = loadings_for(t)
    f, gq = vgq(loadings, arg)
    grad = criterion_grad(t, loadings, gq)
    al = 1.0
    converged = False
    for _ in range(max_iter):
        if orthogonal:
            m = t.T @ grad
            gp = grad - t @ (0.5 * (m + m.T))
        else:
            gp = grad - t * (t * grad).sum(axis=0)
        ss = np.linalg.norm(gp)
        if ss < tol:
            converged = True
            break
        al *= 2.0
        for _ in range(60):
            x = t - al * gp
            if orthogonal:
                u, _, vt = np.linalg.svd(x)
                tt = u @ vt
            else:
                tt = x / np.sqrt((x ** 2).sum(axis=0))
            lt = loadings_for(tt)
            ft, gqt = vgq(lt, arg)
            if ft < f - 0.5 * ss ** 2 * al:
                break
            al /= 2.0
        t, f, loadings, gq = tt, ft, lt, gqt
        grad = criterion_grad(t, loadings, gq)
    return loadings, t, f, converged


def _sign_align(loadings: np.ndarray, transform: np.ndarray, free: np.ndarray):
    """Flip columns whose free-cell loadings sum negative."""
    loadings = loadings.copy()
    transform = transform.copy()
    for col in range(loadings.shape[1]):
        if loadings[free[:, col], col].sum() < 0:
            loadings[:, col] *= -1.0
            transform[:, col] *= -1.0
    return loadings, transform


def target_rotate(a: np.ndarray, mask: TargetMask, tol: float = 1e-8,
                  max_iter: int = 500, strict: bool = True):
    """Oblique target rotation: minimize squared loadings on mask-zero cells.

    Returns (rotated loadings, transform M with L = A M, loss).  With
    `strict=False` a run that exhausts `max_iter` returns its last iterate
    instead of raising; useful when the mask leaves flat directions (an
    all-free column) where the projected gradient decays too slowly to
    meet any tight tolerance.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[1] < 2:
        raise ValueError("rotation requires Q >= 2")
    zero_mask = (~mask.free).astype(float)
    loadings, t, loss, converged = _gpa(a, _vgq_target, zero_mask,
                                        orthogonal=False, tol=tol,
                                        max_iter=max_iter)
    if strict and not converged:
        raise NonConvergence("gradient projection did not reach tolerance")
    transform = np.linalg.inv(t).T
    loadings, transform = _sign_align(loadings, transform, mask.free)
    return loadings, transform, loss


def random_restart_target(a: np.ndarray, mask: TargetMask,
                          rng: np.random.Generator, n_restarts: int = 8,
                          tol: float = 1e-8, max_iter: int = 500, prefer=None,
                          strict: bool = True):
    """Target rotation restarted from random planar pre-rotations.

    Runs an identity start plus `n_restarts` starts pre-rotated in a random
    dimension pair by a random angle; returns (loadings, transform, loss).
    By default the minimum-loss solution wins.  A mask with an all-free
    column (e.g. a bifactor general factor) leaves whole directions
    loss-invariant, so the loss cannot pick among equally good candidates;
    `prefer`, a callable scoring rotated loadings (lower is better), breaks
    such ties when supplied.
    """
    a = np.asarray(a, dtype=float)
    q = a.shape[1]
    candidates = [np.eye(q)]
    for _ in range(n_restarts):
        i, k = rng.choice(q, size=2, replace=False)
        candidates.append(_planar_rotation(q, int(i), int(k), rng.uniform(0, 2 * np.pi)))
    best = None
    for pre in candidates:
        try:
            loadings, transform, loss = target_rotate(a @ pre, mask, tol=tol,
                                                      max_iter=max_iter,
                                                      strict=strict)
        except NonConvergence:
            continue
        score = float(prefer(loadings)) if prefer is not None else loss
        if best is None or score < best[3] - 1e-15:
            best = (loadings, pre @ transform, loss, score)
    if best is None:
        raise NonConvergence("no restart converged")
    return best[:3]


def varimax(a: np.ndarray, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    """Orthogonal varimax rotation (criterion nondecreasing across sweeps)."""
    a = np.asarray(a, dtype=float)
    if a.shape[1] < 2:
        raise ValueError("rotation requires Q >= 2")
    # criterion ascent holds whether or not the gradient tolerance is met,
    # so a slow tail is returned as-is rather than raised
    loadings, _, _, _ = _gpa(a, _vgq_varimax, None, orthogonal=True,
                             tol=tol, max_iter=max_iter)
    # deterministic signs: largest-magnitude entry positive per column
    idx = np.argmax(np.abs(loadings), axis=0)
    flip = loadings[idx, np.arange(loadings.shape[1])] < 0
    loadings[:, flip] *= -1.0
    return loadings


def varimax_criterion(a: np.ndarray) -> float:
    """Sum over columns of the variance of squared loadings."""
    sq = np.asarray(a, dtype=float) ** 2
    return float(np.sum((sq - sq.mean(axis=0)) ** 2) / sq.shape[0])
