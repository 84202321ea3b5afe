"""Composition estimators: naive MLE, zero replacement, SVT and the penalised fit.

Each estimator exists as a plain function over a :class:`CountMatrix` and as a
scikit-learn compatible class. The classes treat the count matrix as ``X`` in
``fit(X)``; ``fit_transform`` returns the estimated composition.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import CompositionMatrix, CountMatrix, SimplexBounds, as_count_matrix
from .exceptions import ConfigError, DomainError, NumericalError
from .solver import FitReport, SolverConfig, fit as _fit_solver

PSEUDO_COUNT = 0.5


def _require_nonempty_rows(W: CountMatrix) -> None:
    if W.zero_rows:
        raise DomainError(f"rows {list(W.zero_rows)} have zero total count")


def estimate_mle(W) -> CompositionMatrix:
    """Row-normalised counts. Unobserved taxa get exact zeros."""
    W = as_count_matrix(W)
    _require_nonempty_rows(W)
    vals = np.asarray(W.values, dtype=float)
    X = vals / W.row_totals[:, None]
    return CompositionMatrix(values=X, has_zeros=bool(np.any(vals == 0)),
                             samples=W.samples, taxa=W.taxa)


def _replace_and_normalise(M: np.ndarray) -> np.ndarray:
    M = np.maximum(M, PSEUDO_COUNT)
    return M / M.sum(axis=1, keepdims=True)


def estimate_zero_replacement(W) -> CompositionMatrix:
    """Raise every count below 0.5 to 0.5, then normalise rows."""
    W = as_count_matrix(W)
    X = _replace_and_normalise(np.asarray(W.values, dtype=float))
    return CompositionMatrix(values=X, samples=W.samples, taxa=W.taxa)


def svt_default_threshold(W) -> float:
    """``(sqrt(n) + sqrt(p)) * median(sigma) / sqrt(min(n, p))``."""
    W = as_count_matrix(W)
    s = np.linalg.svd(np.asarray(W.values, dtype=float), compute_uv=False)
    n, p = W.shape
    return float((np.sqrt(n) + np.sqrt(p)) * np.median(s) / np.sqrt(min(n, p)))


def _svd(M):
    try:
        return np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from None


def hard_threshold_counts(W, threshold=None, rank=None) -> np.ndarray:
    """Keep the singular triplets of ``W`` with ``sigma >= threshold``.

    ``rank`` keeps the leading ``rank`` triplets instead; exactly one of the
    two may be given, and neither means :func:`svt_default_threshold`.
    """
    W = as_count_matrix(W)
    M = np.asarray(W.values, dtype=float)
    if threshold is not None and rank is not None:
        raise ConfigError("give either threshold or rank, not both")
    U, s, Vt = _svd(M)
    if rank is not None:
        if rank < 0:
            raise ConfigError(f"rank must be >= 0, got {rank}")
        keep = np.arange(s.size) < rank
    else:
        if threshold is None:
            threshold = svt_default_threshold(W)
        if threshold < 0:
            raise ConfigError(f"threshold must be >= 0, got {threshold}")
        keep = s >= threshold
    return (U[:, keep] * s[keep]) @ Vt[keep]


def estimate_svt(W, threshold=None, rank=None) -> CompositionMatrix:
    """Hard-threshold the SVD of the counts, floor at 0.5 and normalise rows."""
    W = as_count_matrix(W)
    X = _replace_and_normalise(hard_threshold_counts(W, threshold, rank))
    return CompositionMatrix(values=X, samples=W.samples, taxa=W.taxa)


def estimate_regularized(W, cfg: SolverConfig) -> FitReport:
    return _fit_solver(W, cfg)


def default_lambda(W, bounds: SimplexBounds, delta: float = 7.0,
                   beta_r_over_n: float | None = None) -> float:
    """Theory-driven penalty ``delta * sqrt(beta_R p max(n, p) log(n + p) / (alpha_x^2 n N))``.

    ``beta_R = n * beta_r_over_n``; by default the plug-in
    ``beta_r_over_n = max_i N_i / N`` from the observed depths.
    """
    W = as_count_matrix(W)
    if delta < 0:
        raise ConfigError(f"delta must be >= 0, got {delta}")
    if W.grand_total <= 0:
        raise DomainError("count matrix has no reads")
    if bounds.alpha_x <= 0:
        raise ConfigError("default_lambda needs alpha_x > 0")
    n, p = W.shape
    N = float(W.grand_total)
    if beta_r_over_n is None:
        beta_r_over_n = float(W.row_totals.max()) / N
    beta_r = n * beta_r_over_n
    return float(delta * np.sqrt(beta_r / bounds.alpha_x ** 2
                                 * p * max(n, p) * np.log(n + p) / (n * N)))


# scikit-learn interface ---------------------------------------------------

def check_counts(X) -> CountMatrix:
    """Validate estimator input the way scikit-learn's ``check_array`` would."""
    return as_count_matrix(X)


class _CompositionEstimator(TransformerMixin, BaseEstimator):
    """Shared plumbing: ``fit`` stores ``composition_``; transform re-estimates.

    Transforming new counts recomputes the estimate on those counts with the
    fitted hyperparameters, since every estimator here maps a whole count
    matrix to a composition matrix.
    """

    def _estimate(self, W: CountMatrix) -> CompositionMatrix:  # pragma: no cover
        raise NotImplementedError

    def fit(self, X, y=None):
        W = check_counts(X)
        self.composition_ = self._estimate(W).values
        self.n_features_in_ = W.p
        return self

    def transform(self, X):
        check_is_fitted(self, "composition_")
        W = check_counts(X)
        if W.p != self.n_features_in_:
            raise ValueError(f"X has {W.p} taxa, expected {self.n_features_in_}")
        return self._estimate(W).values

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).composition_


class NaiveMLE(_CompositionEstimator):
    def _estimate(self, W):
        return estimate_mle(W)


class ZeroReplacement(_CompositionEstimator):
    def _estimate(self, W):
        return estimate_zero_replacement(W)


class SVTComposition(_CompositionEstimator):
    """Singular value thresholding of the raw counts.

    Parameters
    ----------
    threshold : float, optional
        Keep singular values ``>= threshold``. Defaults to a scale heuristic.
    rank : int, optional
        Keep a fixed number of leading components instead.
    """

    def __init__(self, threshold=None, rank=None):
        self.threshold = threshold
        self.rank = rank

    def _estimate(self, W):
        return estimate_svt(W, self.threshold, self.rank)


class NuclearNormComposition(_CompositionEstimator):
    """Nuclear-norm penalised multinomial maximum likelihood.

    Parameters
    ----------
    lam : float
        Penalty weight on the nuclear norm. ``None`` uses
        :func:`default_lambda` with ``delta``.
    alpha_x, beta_x : float
        Entries are kept in ``[alpha_x / p, beta_x / p]``; ``beta_x=None``
        leaves the upper bound inactive.
    delta : float
        Multiplier for the theory-driven default penalty.
    l0, gamma, rho, max_iter, tol : solver controls, see :class:`SolverConfig`.
    uniform_zero_rows : bool
        Start rows without reads from the uniform composition instead of
        raising.

    Attributes
    ----------
    composition_ : ndarray of shape (n_samples, n_taxa)
    report_ : FitReport
    n_iter_ : int
    lam_ : float
        Penalty actually used.
    """

    def __init__(self, lam=None, alpha_x=0.1, beta_x=None, delta=7.0, l0=1.0,
                 gamma=2.0, rho=5.0, max_iter=2000, tol=1e-7,
                 uniform_zero_rows=False):
        self.lam = lam
        self.alpha_x = alpha_x
        self.beta_x = beta_x
        self.delta = delta
        self.l0 = l0
        self.gamma = gamma
        self.rho = rho
        self.max_iter = max_iter
        self.tol = tol
        self.uniform_zero_rows = uniform_zero_rows

    def solver_config(self, W: CountMatrix) -> SolverConfig:
        bounds = SimplexBounds(self.alpha_x, self.beta_x)
        lam = self.lam if self.lam is not None else default_lambda(W, bounds, self.delta)
        return SolverConfig(lam=lam, bounds=bounds, l0=self.l0, gamma=self.gamma,
                            rho=self.rho, k_max=self.max_iter, eps=self.tol,
                            uniform_zero_rows=self.uniform_zero_rows)

    def _run(self, W):
        return _fit_solver(W, self.solver_config(W))

    def _estimate(self, W):
        return self._run(W).estimate

    def fit(self, X, y=None):
        W = check_counts(X)
        report = self._run(W)
        self.report_ = report
        self.composition_ = report.estimate.values
        self.n_iter_ = report.iterations
        self.lam_ = report.config.lam
        self.n_features_in_ = W.p
        return self


ESTIMATORS = {
    "mle": NaiveMLE,
    "zr": ZeroReplacement,
    "svt": SVTComposition,
    "reg": NuclearNormComposition,
}
