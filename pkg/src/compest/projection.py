"""Euclidean projection onto the box-constrained simplex.

The target set for a row ``x`` of length ``p`` is::

    {z : sum(z) = 1, alpha_x / p <= z_i <= beta_x / p}

The projection is ``clip(x - t, lo, hi)`` for the unique shift ``t`` making
the clipped vector sum to one. Candidate shifts are the 2p breakpoints
``x_i - lo`` and ``x_i - hi``; the clipped sum is piecewise linear and
nonincreasing in ``t`` so the right segment is located after one sort.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .core import CompositionMatrix, SimplexBounds
from .exceptions import ConfigError, ValidationError

__all__ = [
    "ProjectionBreakpoints",
    "projection_breakpoints",
    "project_row",
    "project_matrix",
    "qp_projection_oracle",
]


@dataclass(frozen=True)
class ProjectionBreakpoints:
    """Sorted candidate shifts ``v``, deficits ``d`` and the selected index."""

    v: np.ndarray
    d: np.ndarray
    j_star: int
    n_free: int
    shift: float


def _check_input(X: np.ndarray, bounds: SimplexBounds) -> tuple[float, float]:
    if not np.all(np.isfinite(X)):
        raise ValidationError("cannot project a vector with non-finite entries")
    p = X.shape[-1]
    bounds.check(p)
    return bounds.lower(p), bounds.upper(p)


def _sweep(X: np.ndarray, lo: float, hi: float):
    """Vectorised breakpoint sweep over the rows of ``X`` (shape ``(m, p)``).

    Returns sorted breakpoints ``v``, deficits ``d`` at each breakpoint, the
    number of free coordinates on the segment to the right of each
    breakpoint, and the selected index ``j*`` per row.
    """
    m, p = X.shape
    cand = np.concatenate([X - hi, X - lo], axis=1)
    # +1: coordinate leaves the upper clip and becomes free; -1: hits the lower clip.
    kind = np.concatenate([np.ones((m, p)), -np.ones((m, p))], axis=1)
    order = np.argsort(cand, axis=1, kind="stable")
    v = np.take_along_axis(cand, order, axis=1)
    n_free = np.cumsum(np.take_along_axis(kind, order, axis=1), axis=1)

    # At the smallest breakpoint every coordinate sits at the upper clip.
    d = np.empty_like(v)
    d[:, 0] = p * hi - 1.0
    steps = n_free[:, :-1] * np.diff(v, axis=1)
    d[:, 1:] = d[:, :1] - np.cumsum(steps, axis=1)

    # Smallest j with d_j >= 0 >= d_{j+1}. Rounding can leave the last deficit
    # a hair above zero; fall back to the last nonnegative segment then.
    cond = (d[:, :-1] >= 0) & (d[:, 1:] <= 0)
    fallback = np.minimum(2 * p - 2, np.sum(d >= 0, axis=1) - 1)
    j_star = np.where(cond.any(axis=1), np.argmax(cond, axis=1), np.maximum(fallback, 0))
    return v, d, n_free, j_star


def _project_rows(X: np.ndarray, lo: float, hi: float) -> np.ndarray:
    m, p = X.shape
    v, d, n_free, j_star = _sweep(X, lo, hi)
    rows = np.arange(m)
    vj = v[rows, j_star]
    dj = d[rows, j_star]
    fj = n_free[rows, j_star]
    # d_j* > 0 implies at least one free coordinate on the next segment.
    shift = vj + np.divide(dj, fj, out=np.zeros_like(dj), where=fj > 0)
    return np.clip(X - shift[:, None], lo, hi)


def projection_breakpoints(x, bounds: SimplexBounds) -> ProjectionBreakpoints:
    """Expose the sorted shifts and deficits used to project ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    lo, hi = _check_input(x, bounds)
    v, d, n_free, j_star = _sweep(x, lo, hi)
    j = int(j_star[0])
    f = int(n_free[0, j])
    shift = v[0, j] + (d[0, j] / f if f > 0 else 0.0)
    return ProjectionBreakpoints(v=v[0], d=d[0], j_star=j, n_free=f, shift=float(shift))


def project_row(x, bounds: SimplexBounds) -> np.ndarray:
    """Project a single p-vector onto the bounded simplex.

    Parameters
    ----------
    x : array_like, shape (p,)
    bounds : SimplexBounds

    Returns
    -------
    ndarray, shape (p,)
        The unique closest point (in Euclidean norm) with entries in
        ``[alpha_x/p, beta_x/p]`` summing to one.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError(f"expected a vector, got shape {x.shape}")
    lo, hi = _check_input(x, bounds)
    return _project_rows(x[None, :], lo, hi)[0]


def project_matrix(X, bounds: SimplexBounds) -> CompositionMatrix:
    """Project every row of ``X`` independently."""
    return CompositionMatrix(values=project_matrix_array(X, bounds))


def project_matrix_array(X, bounds: SimplexBounds) -> np.ndarray:
    """Row-wise projection returning a plain writable array (solver hot path)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"expected a matrix, got shape {X.shape}")
    lo, hi = _check_input(X, bounds)
    return _project_rows(X, lo, hi)


def _kkt_select(x, pinned_lo, pinned_hi, lo, hi, tol):
    """Evaluate a batch of active-set patterns and return the accepted point.

    ``pinned_lo`` and ``pinned_hi`` are boolean arrays of shape (k, p); the
    remaining coordinates are free and share one multiplier ``t`` fixed by
    the equality constraint.
    """
    free = ~(pinned_lo | pinned_hi)
    n_free = free.sum(axis=1)
    fixed = lo * pinned_lo.sum(axis=1) + hi * pinned_hi.sum(axis=1)
    free_sum = (free * x).sum(axis=1)
    has_free = n_free > 0
    t = np.where(has_free, (free_sum - (1.0 - fixed)) / np.maximum(n_free, 1), 0.0)
    z = np.where(pinned_lo, lo, np.where(pinned_hi, hi, x - t[:, None]))
    ok = (np.abs(z.sum(axis=1) - 1.0) <= tol)
    ok &= np.all((z >= lo - tol) & (z <= hi + tol), axis=1)
    # Multiplier signs: lower-pinned want x_i - t <= lo, upper-pinned x_i - t >= hi.
    # With no free coordinate, t ranges over an interval; check it is nonempty.
    shifted = x - t[:, None]
    kkt_free = np.all(np.where(pinned_lo, shifted <= lo + tol, True)
                      & np.where(pinned_hi, shifted >= hi - tol, True), axis=1)
    t_min = np.max(np.where(pinned_hi, x - hi, -np.inf), axis=1)
    t_max = np.min(np.where(pinned_lo, x - lo, np.inf), axis=1)
    kkt_pinned = t_min <= t_max + tol
    ok &= np.where(has_free, kkt_free, kkt_pinned)
    if not ok.any():  # pragma: no cover - the KKT system always has a solution
        raise RuntimeError("no KKT point found")
    dist = np.where(ok, ((z - x) ** 2).sum(axis=1), np.inf)
    return z[int(np.argmin(dist))]


@functools.lru_cache(maxsize=16)
def _all_patterns(p: int):
    pats = np.array(list(itertools.product((0, 1, 2), repeat=p)))
    return pats == 1, pats == 2


def qp_projection_oracle(x, bounds: SimplexBounds, method: str = "auto",
                         tol: float = 1e-10) -> np.ndarray:
    """Reference projection by enumerating KKT active sets.

    Each coordinate is free, pinned at the lower bound or pinned at the upper
    bound. For a pattern the equality constraint gives the common multiplier
    in closed form; a pattern is accepted when the point is feasible and the
    multiplier signs satisfy KKT.

    ``method="exhaustive"`` tries all ``3**p`` patterns. ``method="ordered"``
    only tries patterns where the upper-pinned coordinates are the largest
    entries of ``x`` and the lower-pinned the smallest (the projection is
    order preserving), which is ``O(p**2)`` patterns. ``"auto"`` picks
    exhaustive for ``p <= 6``.
    """
    x = np.asarray(x, dtype=float)
    p = x.size
    if p > 12:
        raise ConfigError("the enumeration oracle is limited to p <= 12")
    bounds.check(p)
    lo, hi = bounds.lower(p), bounds.upper(p)
    if method == "auto":
        method = "exhaustive" if p <= 6 else "ordered"
    if method == "exhaustive":
        pinned_lo, pinned_hi = _all_patterns(p)
        return _kkt_select(x, pinned_lo, pinned_hi, lo, hi, tol)
    if method != "ordered":
        raise ConfigError(f"unknown method {method!r}")
    rank = np.empty(p, dtype=int)
    rank[np.argsort(x, kind="stable")] = np.arange(p)
    n_lo, n_hi = np.array([(a, b) for a in range(p + 1) for b in range(p + 1 - a)]).T
    pinned_lo = rank[None, :] < n_lo[:, None]
    pinned_hi = rank[None, :] >= (p - n_hi)[:, None]
    return _kkt_select(x, pinned_lo, pinned_hi, lo, hi, tol)
