"""Domain types for count and composition matrices.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be shared between worker processes and threads without copying.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigError, ValidationError

ROW_SUM_TOL = 1e-9
BOUND_SLACK = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _as_table(raw, dtype=float) -> np.ndarray:
    """Convert nested sequences or an array into a 2-d float array."""
    if isinstance(raw, np.ndarray):
        arr = raw
    else:
        rows = list(raw)
        if not rows:
            raise ValidationError("table has no rows")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ValidationError(f"table is not rectangular (row widths {sorted(widths)})")
        arr = np.asarray(rows)
    if arr.ndim != 2:
        raise ValidationError(f"expected a 2-d table, got {arr.ndim} dimension(s)")
    try:
        return np.asarray(arr, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"table contains non-numeric entries: {exc}") from None


@dataclass(frozen=True)
class SimplexBounds:
    """Entry-wise box ``alpha_x / p <= X_ij <= beta_x / p`` on the simplex.

    ``beta_x=None`` means ``beta_x = p``, i.e. the upper bound is inactive.
    """

    alpha_x: float = 0.01
    beta_x: Optional[float] = None

    def __post_init__(self):
        a, b = self.alpha_x, self.beta_x
        if not np.isfinite(a) or a < 0 or a > 1:
            raise ConfigError(f"alpha_x must lie in [0, 1], got {a}")
        if b is not None and (not np.isfinite(b) or b < 1):
            raise ConfigError(f"beta_x must be >= 1, got {b}")

    def lower(self, p: int) -> float:
        return self.alpha_x / p

    def upper(self, p: int) -> float:
        return 1.0 if self.beta_x is None else self.beta_x / p

    def resolve_beta(self, p: int) -> float:
        return float(p) if self.beta_x is None else float(self.beta_x)

    def check(self, p: int) -> None:
        """Raise ConfigError unless a p-row can satisfy the box and sum to one."""
        if p < 2:
            raise ConfigError(f"need at least 2 columns, got {p}")
        lo, hi = self.lower(p), self.upper(p)
        if lo * p > 1 + BOUND_SLACK or hi * p < 1 - BOUND_SLACK or lo > hi:
            raise ConfigError(f"bounds [{lo}, {hi}] are infeasible for p={p}")


@dataclass(frozen=True)
class CountMatrix:
    """Nonnegative integer read counts, rows = samples, columns = taxa."""

    values: np.ndarray
    row_totals: np.ndarray
    grand_total: int
    zero_rows: tuple = ()
    samples: Optional[tuple] = None
    taxa: Optional[tuple] = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def row_weights(self) -> "RowWeights":
        if self.grand_total <= 0:
            raise ValidationError("row weights need a positive grand total")
        return RowWeights(self.row_totals / self.grand_total)


@dataclass(frozen=True)
class CompositionMatrix:
    """Rows are probability vectors.

    ``has_zeros`` flags baseline estimates (the naive MLE) that put exact
    zeros on unobserved taxa.
    """

    values: np.ndarray
    has_zeros: bool = False
    samples: Optional[tuple] = None
    taxa: Optional[tuple] = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RowWeights:
    """Per-sample share of the total count, positive and summing to one."""

    r: np.ndarray = field()

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 1 or r.size == 0:
            raise ValidationError("row weights must be a non-empty vector")
        if np.any(r <= 0):
            raise ValidationError("row weights must be strictly positive")
        if abs(r.sum() - 1.0) > 1e-12:
            raise ValidationError(f"row weights sum to {r.sum()!r}, not 1")
        object.__setattr__(self, "r", _readonly(r))


def validate_counts(raw, samples: Sequence[str] | None = None,
                    taxa: Sequence[str] | None = None) -> CountMatrix:
    """Build a :class:`CountMatrix` from an ``n x p`` table of integers.

    Rows whose total is zero are allowed here and reported in ``zero_rows``;
    estimators decide whether they can handle them.
    """
    arr = _as_table(raw)
    n, p = arr.shape
    if n < 1 or p < 2:
        raise ValidationError(f"count matrix must be at least 1x2, got {n}x{p}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("count matrix contains non-finite entries")
    if np.any(arr < 0):
        i, j = np.argwhere(arr < 0)[0]
        raise ValidationError(f"negative count {arr[i, j]:g} at row {i}, column {j}")
    if np.any(arr != np.round(arr)):
        i, j = np.argwhere(arr != np.round(arr))[0]
        raise ValidationError(f"non-integral count {arr[i, j]!r} at row {i}, column {j}")
    values = arr.astype(np.int64)
    row_totals = values.sum(axis=1)
    zero_rows = tuple(int(i) for i in np.flatnonzero(row_totals == 0))
    if samples is not None and len(samples) != n:
        raise ValidationError(f"{len(samples)} sample labels for {n} rows")
    if taxa is not None and len(taxa) != p:
        raise ValidationError(f"{len(taxa)} taxon labels for {p} columns")
    return CountMatrix(
        values=_readonly(values),
        row_totals=_readonly(row_totals),
        grand_total=int(row_totals.sum()),
        zero_rows=zero_rows,
        samples=tuple(samples) if samples is not None else None,
        taxa=tuple(taxa) if taxa is not None else None,
    )


def validate_composition(raw, bounds: SimplexBounds | None = None,
                         samples: Sequence[str] | None = None,
                         taxa: Sequence[str] | None = None) -> CompositionMatrix:
    """Build a :class:`CompositionMatrix`, checking row sums and entry bounds.

    Without ``bounds`` the entries only need to be nonnegative.
    """
    arr = _as_table(raw)
    n, p = arr.shape
    if n < 1 or p < 2:
        raise ValidationError(f"composition matrix must be at least 1x2, got {n}x{p}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("composition matrix contains non-finite entries")
    sums = arr.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"row {i} sums to {sums[i]!r}, not 1")
    lo, hi = (0.0, np.inf) if bounds is None else (bounds.lower(p), bounds.upper(p))
    outside = (arr < lo - BOUND_SLACK) | (arr > hi + BOUND_SLACK)
    if np.any(outside):
        i, j = np.argwhere(outside)[0]
        raise ValidationError(
            f"entry {arr[i, j]!r} at row {i}, column {j} is outside [{lo!r}, {hi!r}]")
    return CompositionMatrix(
        values=_readonly(arr),
        has_zeros=bool(np.any(arr == 0)),
        samples=tuple(samples) if samples is not None else None,
        taxa=tuple(taxa) if taxa is not None else None,
    )


def as_count_matrix(W) -> CountMatrix:
    """Accept a CountMatrix or anything array-like."""
    if isinstance(W, CountMatrix):
        return W
    return validate_counts(W)


def as_array(X) -> np.ndarray:
    if isinstance(X, (CountMatrix, CompositionMatrix)):
        return np.asarray(X.values, dtype=float)
    return np.asarray(X, dtype=float)
