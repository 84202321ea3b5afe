"""Synthetic low-rank compositions, multinomial counts and the benchmark harness.

Randomness: every draw comes from ``numpy.random.Generator(PCG64)`` seeded
through ``SeedSequence``. Replicate ``r`` of a run seeded with ``s`` uses
``SeedSequence([s, r])`` and spawns three children, one each for the composition,
the counts and the cross-validation splits, so replicates are independent of
execution order.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics
from .core import CompositionMatrix, CountMatrix, SimplexBounds, validate_counts
from .estimators import estimate_mle, estimate_svt, estimate_zero_replacement
from .exceptions import ConfigError, GenerationError
from .solver import SolverConfig, fit
from .tuning import default_grids, make_cv_plan, select_tuning

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 100

METRICS = ("frobenius", "avg_kl", "shannon_mse", "simpson_mse")
# Display scale for each metric in summary reports.
UNITS = {"frobenius": 1e-2, "avg_kl": 1e-2, "shannon_mse": 1e-3, "simpson_mse": 1e-6}


@dataclass(frozen=True)
class SimScenario:
    n: int = 100
    p: int = 50
    r: int = 20
    gamma: float = 1.0
    replicates: int = 10
    seed: int = 20190101

    def __post_init__(self):
        if self.n < 2 or self.p < 2:
            raise ConfigError(f"need n, p >= 2, got n={self.n}, p={self.p}")
        if not 1 <= self.r <= min(self.n, self.p):
            raise ConfigError(f"rank r={self.r} must lie in [1, min(n, p)]")
        if self.gamma < 1:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        if self.replicates < 0:
            raise ConfigError("replicates must be >= 0")

    def full_rank(self) -> bool:
        return self.r == min(self.n, self.p)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def replicate_streams(seed: int, replicate: int):
    """Independent (composition, counts, tuning) seed sequences for one replicate."""
    ss = np.random.SeedSequence([int(seed), int(replicate)])
    return tuple(ss.spawn(3))


def generate_composition(scenario: SimScenario, seed=None) -> CompositionMatrix:
    """Draw a strictly positive composition matrix with rank at most ``r``.

    ``Z = U V^T`` with ``U = |N(0, 1)|`` (n x r) and ``V = V1 + V2`` (p x r):
    ``V1`` has ones on the diagonal and ones off it with probability 0.3,
    ``V2`` is Gaussian noise with variance 1e-3. Rows of ``Z`` are normalised;
    the draw is repeated until every entry is positive.
    """
    rng = _rng(scenario.seed if seed is None else seed)
    n, p, r = scenario.n, scenario.p, scenario.r
    for _ in range(MAX_ATTEMPTS):
        U = np.abs(rng.standard_normal((n, r)))
        V1 = (rng.random((p, r)) < 0.3).astype(float)
        k = min(p, r)
        V1[np.arange(k), np.arange(k)] = 1.0
        V2 = rng.normal(0.0, np.sqrt(1e-3), size=(p, r))
        Z = U @ (V1 + V2).T
        if np.all(Z > 0):
            X = Z / Z.sum(axis=1, keepdims=True)
            if np.all(X > 0):
                return CompositionMatrix(values=X)
    raise GenerationError(f"no positive composition after {MAX_ATTEMPTS} attempts")


def sample_multinomial(rng: np.random.Generator, total: int, probs: np.ndarray) -> np.ndarray:
    """Multinomial draw by sequential binomial conditioning."""
    out = np.zeros(probs.size, dtype=np.int64)
    remaining = int(total)
    mass = 1.0
    for j in range(probs.size - 1):
        if remaining == 0:
            break
        q = min(max(probs[j] / mass, 0.0), 1.0) if mass > 0 else 0.0
        out[j] = rng.binomial(remaining, q)
        remaining -= out[j]
        mass -= probs[j]
    out[-1] += remaining
    return out


def depth_profile(n: int, p: int, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Row totals ``round(gamma n p R_i)`` (at least 1), ``R = P / sum(P)``, ``P ~ U[1, 10]``."""
    P = rng.uniform(1.0, 10.0, size=n)
    R = P / P.sum()
    return np.maximum(1, np.rint(gamma * n * p * R)).astype(np.int64)


def generate_counts(X_star, gamma: float, seed=None) -> CountMatrix:
    """Multinomial read counts with sample depths drawn by :func:`depth_profile`."""
    X = np.asarray(getattr(X_star, "values", X_star), dtype=float)
    rng = _rng(seed)
    n, p = X.shape
    totals = depth_profile(n, p, gamma, rng)
    W = np.vstack([sample_multinomial(rng, totals[i], X[i]) for i in range(n)])
    return validate_counts(W)


# Benchmark harness ---------------------------------------------------------

@dataclass(frozen=True)
class TuningSpec:
    """Cross-validation settings used for the penalised estimator in benchmarks.

    ``n_lambdas`` log-spaced penalties span the default range (see
    :func:`compest.tuning.default_grids`); ``lambdas`` overrides it.
    """

    k_folds: int = 5
    n_splits: int = 3
    n_lambdas: int = 4
    alphas: tuple = (0.1, 0.5)
    lambdas: Optional[tuple] = None
    max_iter: int = 2000
    tol: float = 1e-7


@dataclass
class BenchmarkReport:
    scenario: SimScenario
    estimators: tuple
    rows: list = field(default_factory=list)      # (replicate, estimator, metric, value)
    selections: list = field(default_factory=list)  # (replicate, lam, alpha_x)
    failures: list = field(default_factory=list)  # (replicate, estimator, message)

    def values(self, estimator: str, metric: str) -> np.ndarray:
        return np.array([v for _, e, m, v in self.rows if e == estimator and m == metric])

    def mean(self, estimator: str, metric: str) -> float:
        vals = self.values(estimator, metric)
        return float(vals.mean()) if vals.size else float("nan")

    def summary(self) -> list:
        """(estimator, metric, mean, scaled mean, unit, replicates) per cell."""
        out = []
        for metric in METRICS:
            for est in self.estimators:
                vals = self.values(est, metric)
                if not vals.size:
                    continue
                mean = float(vals.mean())
                out.append((est, metric, mean, mean / UNITS[metric], UNITS[metric], vals.size))
        return out


SCENARIO_COLUMNS = ("n", "p", "r", "gamma", "rank_model")


def _scenario_cells(sc: SimScenario) -> list:
    return [sc.n, sc.p, sc.r, _fmt(sc.gamma), "full" if sc.full_rank() else "low"]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def report_csv(reports) -> str:
    """Long-format rows: scenario columns, replicate, estimator, metric, value."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow([*SCENARIO_COLUMNS, "replicate", "estimator", "metric", "value"])
    for rep in reports:
        cells = _scenario_cells(rep.scenario)
        for r, est, metric, value in rep.rows:
            out.writerow([*cells, r, est, metric, _fmt(value)])
    return buf.getvalue()


def summary_csv(reports) -> str:
    """Mean per (scenario, estimator, metric), with the table display scaling."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow([*SCENARIO_COLUMNS, "estimator", "metric", "mean", "scaled_mean",
                  "units", "replicates", "failures"])
    for rep in reports:
        cells = _scenario_cells(rep.scenario)
        for est, metric, mean, scaled, unit, count in rep.summary():
            failed = sum(1 for _, e, _ in rep.failures if e == est)
            out.writerow([*cells, est, metric, _fmt(mean), f"{scaled:.4f}",
                          f"x{unit:.0e}", count, failed])
    return buf.getvalue()


def selections_csv(reports) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow([*SCENARIO_COLUMNS, "replicate", "lambda", "alpha_x"])
    for rep in reports:
        cells = _scenario_cells(rep.scenario)
        for r, lam, a in rep.selections:
            out.writerow([*cells, r, _fmt(lam), _fmt(a)])
    return buf.getvalue()


def _losses(X_star: np.ndarray, X_hat: np.ndarray) -> dict:
    return {
        "frobenius": metrics.frobenius_sq(X_star, X_hat),
        "avg_kl": metrics.average_kl(X_star, X_hat),
        "shannon_mse": metrics.index_mse(metrics.shannon_index(X_star),
                                         metrics.shannon_index(X_hat)),
        "simpson_mse": metrics.index_mse(metrics.simpson_index(X_star),
                                         metrics.simpson_index(X_hat)),
    }


def svt_sweep(W, X_star: np.ndarray) -> dict:
    """Best loss over every retained rank, separately for each metric.

    Uses the truth, so it is an optimistic (oracle) version of the SVT baseline.
    """
    best = {m: np.inf for m in METRICS}
    for rank in range(1, min(W.shape) + 1):
        X_hat = estimate_svt(W, rank=rank).values
        for m, v in _losses(X_star, X_hat).items():
            best[m] = min(best[m], v)
    return best


def _run_replicate(args):
    """Simulate one replicate and score every estimator; returns rows and notes."""
    scenario, replicate, estimators, tuning, truth = args
    comp_ss, count_ss, cv_ss = replicate_streams(scenario.seed, replicate)
    X_star = truth if truth is not None else generate_composition(scenario, comp_ss).values
    W = generate_counts(X_star, scenario.gamma, count_ss)
    rows, failures, selection = [], [], None
    for est in estimators:
        try:
            if est == "zr":
                losses = _losses(X_star, estimate_zero_replacement(W).values)
            elif est == "mle":
                X_hat = estimate_mle(W).values
                losses = {"frobenius": metrics.frobenius_sq(X_star, X_hat),
                          "simpson_mse": metrics.index_mse(metrics.simpson_index(X_star),
                                                           metrics.simpson_index(X_hat))}
            elif est == "svt":
                losses = _losses(X_star, estimate_svt(W, rank=scenario.r).values)
            elif est == "svt_best":
                losses = svt_sweep(W, X_star)
            elif est == "reg":
                if tuning.lambdas is None:
                    grids = default_grids(W, tuning.n_lambdas, tuning.alphas)
                else:
                    grids = (tuning.lambdas, tuning.alphas)
                cv_seed = int(cv_ss.generate_state(1)[0])
                plan = make_cv_plan(W, tuning.k_folds, tuning.n_splits, grids, cv_seed)
                base = SolverConfig(k_max=tuning.max_iter, eps=tuning.tol)
                sel = select_tuning(W, plan, base)
                selection = (sel.lam, sel.alpha_x)
                cfg = SolverConfig(lam=sel.lam, bounds=SimplexBounds(sel.alpha_x),
                                   k_max=tuning.max_iter, eps=tuning.tol)
                losses = _losses(X_star, fit(W, cfg).estimate.values)
            else:
                raise ConfigError(f"unknown estimator {est!r}")
        except ConfigError:
            raise
        except Exception as exc:  # recorded per replicate, the run continues
            failures.append((replicate, est, f"{type(exc).__name__}: {exc}"))
            continue
        rows.extend((replicate, est, m, float(losses[m])) for m in METRICS if m in losses)
    return rows, failures, selection


def run_benchmark(scenario: SimScenario, estimators=("reg", "zr", "svt"),
                  tuning: Optional[TuningSpec] = None, n_jobs: int = 1,
                  fixed_truth: bool = False) -> BenchmarkReport:
    """Repeat simulate-estimate-score for ``scenario.replicates`` replicates.

    Estimator labels: ``reg`` (penalised, CV-tuned), ``zr`` (zero
    replacement), ``svt`` (hard thresholding keeping the scenario rank ``r``),
    ``svt_best`` (best rank per metric, chosen with the truth) and ``mle``
    (Frobenius and Simpson only; the naive estimate has zeros).

    With ``fixed_truth`` every replicate reuses the composition of replicate 0
    and only the counts (and CV splits) are redrawn.
    """
    tuning = tuning or TuningSpec()
    estimators = tuple(estimators)
    truth = None
    if fixed_truth and scenario.replicates > 0:
        truth = generate_composition(scenario, replicate_streams(scenario.seed, 0)[0]).values
    jobs = [(scenario, r, estimators, tuning, truth) for r in range(scenario.replicates)]
    if n_jobs and n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_replicate, jobs))
    else:
        results = [_run_replicate(j) for j in jobs]
    report = BenchmarkReport(scenario=scenario, estimators=estimators)
    for r, (rows, failures, selection) in enumerate(results):
        report.rows.extend(rows)
        report.failures.extend(failures)
        if selection is not None:
            report.selections.append((r, *selection))
        for rep, est, msg in failures:
            logger.warning("replicate %d, estimator %s failed: %s", rep, est, msg)
    return report
