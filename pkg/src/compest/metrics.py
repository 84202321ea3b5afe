"""Losses between composition matrices and per-sample diversity indices.

Logs are natural throughout, so entropies are in nats.
"""
from __future__ import annotations

import numpy as np

from .core import as_array
from .exceptions import DomainError, NumericalError, ValidationError


def _pair(X_star, X_hat):
    A, B = as_array(X_star), as_array(X_hat)
    if A.shape != B.shape:
        raise ValidationError(f"shape mismatch: {A.shape} vs {B.shape}")
    return A, B


def _u_minus_log1p(u: np.ndarray) -> np.ndarray:
    """``u - log(1 + u)`` without cancellation for small ``|u|``."""
    out = np.empty_like(u)
    small = np.abs(u) < 1e-3
    s = u[small]
    out[small] = s * s * (1 / 2 - s * (1 / 3 - s * (1 / 4 - s * (1 / 5 - s / 6))))
    out[~small] = u[~small] - np.log1p(u[~small])
    return out


def kl_rows(X_star, X_hat) -> np.ndarray:
    """Per-row KL divergence ``sum_j a_ij log(a_ij / b_ij)`` with ``0 log 0 = 0``.

    Evaluated as ``sum_j [a log(a/b) - a + b]``, which is the same number when
    both rows sum to one but is a sum of nonnegative terms, so nearly equal
    rows give a tiny positive value instead of rounding noise.
    """
    A, B = _pair(X_star, X_hat)
    pos = A > 0
    if np.any(pos & ~(B > 0)):
        i, j = np.argwhere(pos & ~(B > 0))[0]
        raise DomainError(f"estimate is zero at ({i}, {j}) where the reference is positive")
    terms = B.copy()  # a = 0 contributes b
    a = A[pos]
    terms[pos] = a * _u_minus_log1p((B[pos] - a) / a)
    return terms.sum(axis=1)


def kl_matrix(X_star, X_hat) -> float:
    """Sum over rows of the KL divergence from ``X_star`` to ``X_hat``."""
    return float(kl_rows(X_star, X_hat).sum())


def average_kl(X_star, X_hat) -> float:
    """``kl_matrix / n``, the per-sample average used in benchmark tables."""
    A = as_array(X_star)
    return kl_matrix(A, X_hat) / A.shape[0]


def frobenius_sq(X_star, X_hat, scaled: bool = False) -> float:
    """Squared Frobenius distance; ``scaled=True`` multiplies by ``p / n``."""
    A, B = _pair(X_star, X_hat)
    val = float(np.sum((B - A) ** 2))
    if scaled:
        n, p = A.shape
        val *= p / n
    return val


def shannon_index(X) -> np.ndarray:
    """Per-row entropy ``-sum_j x_ij log x_ij``.

    Raises DomainError on zero entries; a zero proportion means the estimator
    did not produce a strictly positive composition.
    """
    X = as_array(X)
    if np.any(X <= 0):
        i = int(np.argwhere(X <= 0)[0][0])
        raise DomainError(f"row {i} has a nonpositive entry; Shannon index needs X > 0")
    return -np.sum(X * np.log(X), axis=1)


def simpson_index(X) -> np.ndarray:
    """Per-row sum of squared proportions."""
    X = as_array(X)
    return np.sum(X * X, axis=1)


def index_mse(index_true, index_est) -> float:
    a = np.asarray(index_true, dtype=float)
    b = np.asarray(index_est, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((b - a) ** 2))


def singular_value_profile(M) -> np.ndarray:
    """Singular values in nonincreasing order."""
    M = as_array(M)
    if not np.all(np.isfinite(M)):
        raise NumericalError("matrix has non-finite entries")
    try:
        return np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from None
