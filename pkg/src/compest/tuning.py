"""Cross-validated choice of the penalty ``lam`` and the lower bound ``alpha_x``.

Each split holds out a random set of rows. Held-out rows keep a random
subset of their columns in the training matrix (the rest are zeroed), so the
fit still sees part of every sample. The risk of a grid point is the summed
KL divergence from the full-data MLE rows to the fitted held-out rows.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import CountMatrix, SimplexBounds, as_count_matrix, validate_counts
from .estimators import (
    _CompositionEstimator,
    check_counts,
    default_lambda,
    estimate_mle,
)
from .exceptions import CompestError, ConfigError
from .metrics import kl_rows
from .solver import SolverConfig, fit as _fit_solver, with_params

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.01, 0.05, 0.1, 0.5)


@dataclass(frozen=True)
class CvPlan:
    """Row splits, per-row column subsets and the (lam, alpha_x) grid.

    ``masks[l]`` is the boolean training set of split ``l``: every entry of
    the rows in ``train_rows[l]`` plus the kept columns of ``held_rows[l]``.
    """

    k_folds: int
    n_splits: int
    lambdas: tuple
    alphas: tuple
    seed: int
    train_rows: tuple = ()
    held_rows: tuple = ()
    masks: tuple = ()

    def grid(self):
        """Grid points ordered by lam, then alpha_x."""
        return [(lam, a) for lam in sorted(self.lambdas) for a in sorted(self.alphas)]


def default_grids(W, n_lambdas: int = 8, alphas: Sequence[float] = DEFAULT_ALPHAS,
                  delta: float = 7.0):
    """Log-spaced penalties around the theory-driven value.

    The anchor uses the largest ``alpha_x`` of the grid (the smallest anchor),
    and the grid spans ``[anchor / 100, anchor * 10]``.
    """
    W = as_count_matrix(W)
    anchor = default_lambda(W, SimplexBounds(max(alphas)), delta)
    lambdas = np.geomspace(anchor / 100, anchor * 10, n_lambdas)
    return tuple(float(x) for x in lambdas), tuple(float(a) for a in alphas)


def make_cv_plan(W, k_folds: int = 5, n_splits: int = 5, grids=None,
                 seed: int = 0) -> CvPlan:
    """Draw ``n_splits`` row splits with ``floor((K-1) n / K)`` training rows.

    Every held-out row keeps ``floor((K-1) p / K)`` randomly chosen columns.
    """
    W = as_count_matrix(W)
    n, p = W.shape
    if k_folds < 2:
        raise ConfigError(f"k_folds must be >= 2, got {k_folds}")
    if k_folds > n:
        raise ConfigError(f"k_folds={k_folds} exceeds the number of rows n={n}")
    if n_splits < 0:
        raise ConfigError(f"n_splits must be >= 0, got {n_splits}")
    lambdas, alphas = default_grids(W) if grids is None else grids
    lambdas, alphas = tuple(float(x) for x in lambdas), tuple(float(a) for a in alphas)
    if not lambdas or not alphas:
        raise ConfigError("tuning grids must be nonempty")
    if any(x < 0 for x in lambdas) or any(not 0 < a <= 1 for a in alphas):
        raise ConfigError("need lam >= 0 and 0 < alpha_x <= 1 on the grid")

    n_train = (k_folds - 1) * n // k_folds
    p_keep = (k_folds - 1) * p // k_folds
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    train_rows, held_rows, masks = [], [], []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
        held = np.sort(perm[n_train:])
        mask = np.zeros((n, p), dtype=bool)
        mask[train] = True
        for i in held:
            mask[i, rng.choice(p, size=p_keep, replace=False)] = True
        mask.setflags(write=False)
        train_rows.append(train)
        held_rows.append(held)
        masks.append(mask)
    return CvPlan(k_folds=k_folds, n_splits=n_splits, lambdas=lambdas, alphas=alphas,
                  seed=seed, train_rows=tuple(train_rows), held_rows=tuple(held_rows),
                  masks=tuple(masks))


class TuningFailure(CompestError):
    """A solver error tagged with the split and grid point that raised it."""


def _split_risk(args):
    W_train, mle_held, held, cfg = args
    est = _fit_solver(W_train, cfg).estimate.values
    return float(kl_rows(mle_held, est[held]).sum())


def _tasks(W: CountMatrix, plan: CvPlan, points, base: SolverConfig):
    mle = estimate_mle(W).values
    Wv = np.asarray(W.values)
    for lam, alpha in points:
        cfg = with_params(base, lam=lam, alpha_x=alpha)
        for l in range(plan.n_splits):
            held = plan.held_rows[l]
            W_train = validate_counts(np.where(plan.masks[l], Wv, 0))
            yield (lam, alpha, l), (W_train, mle[held], held, cfg)


def _base_config(base: Optional[SolverConfig]) -> SolverConfig:
    from dataclasses import replace
    base = base or SolverConfig()
    return replace(base, uniform_zero_rows=True)


def _evaluate(W, plan, points, base, n_jobs):
    W = as_count_matrix(W)
    tasks = list(_tasks(W, plan, points, _base_config(base)))
    keys = [k for k, _ in tasks]
    args = [a for _, a in tasks]
    try:
        if n_jobs and n_jobs > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                risks = list(pool.map(_split_risk, args))
        else:
            risks = []
            for key, a in zip(keys, args):
                try:
                    risks.append(_split_risk(a))
                except CompestError as exc:
                    lam, alpha, l = key
                    raise TuningFailure(
                        f"split {l}, lam={lam!r}, alpha_x={alpha!r}: {exc}") from exc
    except TuningFailure:
        raise
    except CompestError as exc:
        raise TuningFailure(f"solver failed during cross-validation: {exc}") from exc
    totals = {pt: 0.0 for pt in points}
    for (lam, alpha, _), r in zip(keys, risks):
        totals[(lam, alpha)] += r
    return totals


def cv_risk(W, plan: CvPlan, lam: float, alpha_x: float,
            base: Optional[SolverConfig] = None) -> float:
    """Summed held-out KL divergence for one grid point (0 when there are no splits)."""
    W = as_count_matrix(W)
    if W.zero_rows:
        from .exceptions import DomainError
        raise DomainError(f"rows {list(W.zero_rows)} have zero total count")
    return _evaluate(W, plan, [(float(lam), float(alpha_x))], base, 1)[(float(lam), float(alpha_x))]


@dataclass(frozen=True)
class TuningResult:
    lam: float
    alpha_x: float
    risk: float
    table: tuple = field(default=())  # (lam, alpha_x, risk) rows in grid order

    def table_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["lambda", "alpha_x", "risk"])
        for lam, a, r in self.table:
            out.writerow([f"{lam:.17g}", f"{a:.17g}", f"{r:.17g}"])
        return buf.getvalue()

    def summary_json(self, plan: Optional[CvPlan] = None) -> str:
        doc = {"lambda": self.lam, "alpha_x": self.alpha_x, "risk": self.risk}
        if plan is not None:
            doc.update(k_folds=plan.k_folds, n_splits=plan.n_splits, seed=plan.seed,
                       lambdas=list(plan.lambdas), alphas=list(plan.alphas))
        return json.dumps(doc, indent=2, sort_keys=True)


def select_from_table(table) -> tuple:
    """Grid argmin; ties go to the smallest lam, then the smallest alpha_x."""
    best = min(table, key=lambda row: (row[2], row[0], row[1]))
    return best


def select_tuning(W, plan: CvPlan, base: Optional[SolverConfig] = None,
                  n_jobs: int = 1) -> TuningResult:
    """Evaluate the whole grid and return the risk minimiser with the table."""
    W = as_count_matrix(W)
    if W.zero_rows:
        from .exceptions import DomainError
        raise DomainError(f"rows {list(W.zero_rows)} have zero total count")
    points = plan.grid()
    totals = _evaluate(W, plan, points, base, n_jobs)
    table = tuple((lam, a, totals[(lam, a)]) for lam, a in points)
    lam, a, risk = select_from_table(table)
    return TuningResult(lam=lam, alpha_x=a, risk=risk, table=table)


class NuclearNormCompositionCV(_CompositionEstimator):
    """Penalised estimator with ``(lam, alpha_x)`` chosen by cross-validation.

    Attributes
    ----------
    lam_, alpha_x_ : selected parameters
    tuning_ : TuningResult
    plan_ : CvPlan
    report_ : FitReport of the refit on all rows
    """

    def __init__(self, lambdas=None, alphas=DEFAULT_ALPHAS, k_folds=5, n_splits=5,
                 random_state=0, beta_x=None, l0=1.0, gamma=2.0, rho=5.0,
                 max_iter=2000, tol=1e-7, n_jobs=1):
        self.lambdas = lambdas
        self.alphas = alphas
        self.k_folds = k_folds
        self.n_splits = n_splits
        self.random_state = random_state
        self.beta_x = beta_x
        self.l0 = l0
        self.gamma = gamma
        self.rho = rho
        self.max_iter = max_iter
        self.tol = tol
        self.n_jobs = n_jobs

    def _base(self) -> SolverConfig:
        return SolverConfig(bounds=SimplexBounds(DEFAULT_ALPHAS[0], self.beta_x), l0=self.l0,
                            gamma=self.gamma, rho=self.rho, k_max=self.max_iter, eps=self.tol)

    def _estimate(self, W):
        return _fit_solver(W, with_params(self._base(), self.lam_, self.alpha_x_)).estimate

    def fit(self, X, y=None):
        W = check_counts(X)
        if self.lambdas is None:
            grids = default_grids(W, alphas=self.alphas)
        else:
            grids = (self.lambdas, self.alphas)
        plan = make_cv_plan(W, self.k_folds, self.n_splits, grids, self.random_state)
        base = self._base()
        result = select_tuning(W, plan, base, self.n_jobs)
        self.plan_, self.tuning_ = plan, result
        self.lam_, self.alpha_x_ = result.lam, result.alpha_x
        self.report_ = _fit_solver(W, with_params(base, result.lam, result.alpha_x))
        self.composition_ = self.report_.estimate.values
        self.n_iter_ = self.report_.iterations
        self.n_features_in_ = W.p
        return self
