"""Accelerated proximal gradient for nuclear-norm penalised multinomial likelihood.

Minimises ``L_N(X) + lam * ||X||_*`` over row-stochastic matrices whose
entries are boxed in ``[alpha_x/p, beta_x/p]``, where
``L_N(X) = -sum(W * log X) / N``. Each iteration takes a gradient step from
the momentum point, soft-thresholds the singular values, and projects the
rows back onto the bounded simplex. The curvature ``L_k`` is found by
backtracking until the quadratic model majorises the loss.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    CompositionMatrix,
    CountMatrix,
    SimplexBounds,
    as_array,
    as_count_matrix,
)
from .exceptions import ConfigError, DomainError, NumericalError
from .projection import project_matrix_array

logger = logging.getLogger(__name__)

# Absolute floor for the momentum point where counts are positive. The
# solver clamps to max(CLAMP_FLOOR, alpha_x / p): a floor far below the box
# makes the gradient explode and the backtracked curvature never recovers.
CLAMP_FLOOR = 1e-12
GAP_SLACK = 1e-13


@dataclass(frozen=True)
class SolverConfig:
    """Penalty weight, constraint box and optimisation controls."""

    lam: float = 0.0
    bounds: SimplexBounds = field(default_factory=SimplexBounds)
    l0: float = 1.0
    gamma: float = 2.0
    rho: float = 5.0
    k_max: int = 2000
    eps: float = 1e-7
    window: int = 3
    uniform_zero_rows: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lam must be a finite value >= 0, got {self.lam}")
        if not self.l0 > 0:
            raise ConfigError(f"l0 must be positive, got {self.l0}")
        if not self.gamma > 1:
            raise ConfigError(f"gamma must exceed 1, got {self.gamma}")
        if not self.rho >= 4.5:
            raise ConfigError(f"rho must be at least 4.5, got {self.rho}")
        if self.k_max < 0:
            raise ConfigError(f"k_max must be >= 0, got {self.k_max}")
        if not self.eps >= 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")


@dataclass
class SolverState:
    x: np.ndarray
    x_prev: np.ndarray
    y: np.ndarray
    l: float
    k: int = 0
    objective_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class FitReport:
    """Result of :func:`fit` with per-iteration diagnostics.

    ``objective_trace[0]`` is the penalised objective at the projected
    initialiser; entry ``k`` belongs to iterate ``X_k``. ``curvature_trace``
    and ``gap_trace`` hold the accepted ``L_k`` and line-search gap for
    iterations ``1..k``.
    """

    estimate: CompositionMatrix
    iterations: int
    converged: bool
    objective_trace: tuple
    curvature_trace: tuple
    gap_trace: tuple
    final_singular_values: np.ndarray
    line_search_trials: int
    clamp_events: int
    config: SolverConfig

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "lambda": cfg.lam,
            "alpha_x": cfg.bounds.alpha_x,
            "beta_x": cfg.bounds.resolve_beta(self.estimate.p),
            "l0": cfg.l0,
            "gamma": cfg.gamma,
            "rho": cfg.rho,
            "k_max": cfg.k_max,
            "eps": cfg.eps,
            "final_objective": self.objective_trace[-1],
            "objective_trace": list(self.objective_trace),
            "curvature_trace": list(self.curvature_trace),
            "gap_trace": list(self.gap_trace),
            "line_search_trials": self.line_search_trials,
            "clamp_events": self.clamp_events,
            "final_singular_values": [float(s) for s in self.final_singular_values],
        }

    def trace_csv(self) -> str:
        """Objective trace as CSV text: iteration, objective, L_k, gap."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["iteration", "objective", "L_k", "gap"])
        out.writerow([0, f"{self.objective_trace[0]:.17g}", "", ""])
        for k, (obj, l, g) in enumerate(
                zip(self.objective_trace[1:], self.curvature_trace, self.gap_trace), start=1):
            out.writerow([k, f"{obj:.17g}", f"{l:.17g}", f"{g:.17g}"])
        return buf.getvalue()


def _counts(W) -> tuple[np.ndarray, float]:
    if isinstance(W, CountMatrix):
        return np.asarray(W.values, dtype=float), float(W.grand_total)
    Wa = np.asarray(W, dtype=float)
    return Wa, float(Wa.sum())


def _check_support(X: np.ndarray, W: np.ndarray) -> None:
    if X.shape != W.shape:
        raise DomainError(f"shape mismatch: X is {X.shape}, W is {W.shape}")
    bad = (W > 0) & ~(X > 0)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise DomainError(f"X[{i}, {j}] = {X[i, j]!r} is not positive where W > 0")


def neg_log_likelihood(X, W) -> float:
    """``-sum_{ij} W_ij log X_ij / N``; zero counts contribute nothing."""
    X = as_array(X)
    Wa, N = _counts(W)
    _check_support(X, Wa)
    if N <= 0:
        raise DomainError("total count N must be positive")
    pos = Wa > 0
    return float(-np.sum(Wa[pos] * np.log(X[pos])) / N)


def grad_neg_log_likelihood(X, W) -> np.ndarray:
    """Entry-wise ``-W_ij / (N X_ij)``, exactly zero where ``W_ij = 0``."""
    X = as_array(X)
    Wa, N = _counts(W)
    _check_support(X, Wa)
    if N <= 0:
        raise DomainError("total count N must be positive")
    G = np.zeros_like(X)
    pos = Wa > 0
    G[pos] = -Wa[pos] / (N * X[pos])
    return G


def _svd(M: np.ndarray):
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from None


def soft_threshold_svd(M, tau: float) -> np.ndarray:
    """Shrink every singular value of ``M`` by ``tau`` and clip at zero."""
    M = np.asarray(M, dtype=float)
    if tau < 0:
        raise ConfigError(f"tau must be >= 0, got {tau}")
    if not np.all(np.isfinite(M)):
        raise NumericalError("cannot threshold a matrix with non-finite entries")
    if tau == 0:
        return M.copy()
    U, s, Vt = _svd(M)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def prox_step(y, W, l: float, cfg: SolverConfig) -> np.ndarray:
    """One proximal-gradient map from ``y`` with curvature ``l``."""
    y = as_array(y)
    G = grad_neg_log_likelihood(y, W)
    Z = soft_threshold_svd(y - G / l, cfg.lam / l)
    return project_matrix_array(Z, cfg.bounds)


def line_search_gap(x_new, y_old, W, l: float) -> float:
    """Error of the quadratic model with curvature ``l`` around ``y_old``.

    Nonpositive means the model majorises the loss at ``x_new``.
    """
    x_new, y_old = as_array(x_new), as_array(y_old)
    diff = x_new - y_old
    G = grad_neg_log_likelihood(y_old, W)
    return (neg_log_likelihood(x_new, W) - neg_log_likelihood(y_old, W)
            - float(np.sum(diff * G)) - 0.5 * l * float(np.sum(diff * diff)))


def _nuclear_norm(X: np.ndarray) -> float:
    return float(np.linalg.svd(X, compute_uv=False).sum())


def initial_point(W: CountMatrix, cfg: SolverConfig) -> np.ndarray:
    """Row-normalised counts projected into the constraint box."""
    Wa = np.asarray(W.values, dtype=float)
    totals = Wa.sum(axis=1, keepdims=True)
    if W.zero_rows and not cfg.uniform_zero_rows:
        raise DomainError(
            f"rows {list(W.zero_rows)} have zero total count; "
            "enable uniform_zero_rows to start them from the uniform row")
    X0 = np.divide(Wa, totals, out=np.full_like(Wa, 1.0 / W.p), where=totals > 0)
    return project_matrix_array(X0, cfg.bounds)


class _Problem:
    """Loss pieces with the count matrix cached (avoids revalidation per call)."""

    def __init__(self, W: CountMatrix):
        Wa = np.asarray(W.values, dtype=float)
        self.N = float(W.grand_total)
        self.pos = Wa > 0
        self.w = Wa[self.pos]

    def loss(self, X: np.ndarray) -> float:
        return float(-np.sum(self.w * np.log(X[self.pos])) / self.N)

    def grad(self, X: np.ndarray) -> np.ndarray:
        G = np.zeros_like(X)
        G[self.pos] = -self.w / (self.N * X[self.pos])
        return G


def fit(W, cfg: SolverConfig) -> FitReport:
    """Run the accelerated proximal gradient loop.

    Parameters
    ----------
    W : CountMatrix or array_like
        Read counts, samples in rows.
    cfg : SolverConfig

    Returns
    -------
    FitReport
        ``estimate`` is the last iterate ``X_k``.
    """
    W = as_count_matrix(W)
    cfg.bounds.check(W.p)
    if cfg.lam > 0 or cfg.k_max > 0:
        if cfg.bounds.alpha_x <= 0:
            raise ConfigError("the estimator needs alpha_x > 0 so the log-likelihood is finite")
    if W.grand_total <= 0:
        raise DomainError("count matrix has no reads")
    prob = _Problem(W)

    def objective(X):
        return prob.loss(X) + cfg.lam * _nuclear_norm(X)

    floor = max(CLAMP_FLOOR, cfg.bounds.lower(W.p))
    x = initial_point(W, cfg)
    state = SolverState(x=x, x_prev=x.copy(), y=x.copy(), l=cfg.l0)
    state.objective_trace.append(objective(x))
    curvatures, gaps = [], []
    trials = clamps = 0
    converged = False

    for k in range(1, cfg.k_max + 1):
        y = state.y
        low = prob.pos & (y < floor)
        if low.any():
            clamps += int(low.sum())
            y = np.where(low, floor, y)
        g = prob.grad(y)
        f_y = prob.loss(y)
        l = state.l
        while True:
            trials += 1
            x_new = project_matrix_array(soft_threshold_svd(y - g / l, cfg.lam / l), cfg.bounds)
            diff = x_new - y
            gap = (prob.loss(x_new) - f_y - float(np.sum(diff * g))
                   - 0.5 * l * float(np.sum(diff * diff)))
            # rounding in the loss difference is ~1e-16 relative; do not chase it
            if gap <= GAP_SLACK * (1.0 + abs(f_y)):
                break
            l *= cfg.gamma
            if not np.isfinite(l):
                raise NumericalError("line search diverged", trace=state.objective_trace)
        obj = objective(x_new)
        if not np.isfinite(obj):
            raise NumericalError(f"objective became non-finite at iteration {k}",
                                 trace=state.objective_trace)
        momentum = (k - 1) / (k + cfg.rho - 1)
        state.x_prev, state.x = state.x, x_new
        state.y = x_new + momentum * (x_new - state.x_prev)
        state.l, state.k = l, k
        state.objective_trace.append(obj)
        curvatures.append(l)
        gaps.append(gap)

        tr = state.objective_trace
        if len(tr) > cfg.window:
            recent = np.asarray(tr[-cfg.window - 1:])
            rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[1:]), 1e-300)
            if np.all(rel < cfg.eps):
                converged = True
                break

    logger.debug("fit finished after %d iterations (converged=%s)", state.k, converged)
    return FitReport(
        estimate=CompositionMatrix(values=state.x, samples=W.samples, taxa=W.taxa),
        iterations=state.k,
        converged=converged,
        objective_trace=tuple(state.objective_trace),
        curvature_trace=tuple(curvatures),
        gap_trace=tuple(gaps),
        final_singular_values=np.linalg.svd(state.x, compute_uv=False),
        line_search_trials=trials,
        clamp_events=clamps,
        config=cfg,
    )


def with_params(cfg: SolverConfig, lam: Optional[float] = None,
                alpha_x: Optional[float] = None) -> SolverConfig:
    """Copy of ``cfg`` with the two tuned parameters replaced."""
    bounds = cfg.bounds if alpha_x is None else replace(cfg.bounds, alpha_x=alpha_x)
    return replace(cfg, lam=cfg.lam if lam is None else lam, bounds=bounds)
