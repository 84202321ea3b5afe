"""Command-line entry point: ``compest {estimate,tune,simulate,benchmark,diversity}``.

Exit codes: 0 success, 2 input or configuration error, 3 domain error
(e.g. a zero where a logarithm is needed), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as cio
from .core import SimplexBounds
from .estimators import (
    default_lambda,
    estimate_mle,
    estimate_svt,
    estimate_zero_replacement,
)
from .exceptions import (
    CompestError,
    ConfigError,
    DomainError,
    GenerationError,
    NumericalError,
    ValidationError,
)
from .metrics import shannon_index, simpson_index, singular_value_profile
from .simulation import (
    SimScenario,
    TuningSpec,
    generate_composition,
    generate_counts,
    replicate_streams,
    report_csv,
    run_benchmark,
    selections_csv,
    summary_csv,
)
from .solver import SolverConfig, fit
from .tuning import DEFAULT_ALPHAS, default_grids, make_cv_plan, select_tuning

logger = logging.getLogger("compest")

DEFAULT_SEED = 20190101
EXIT_INPUT, EXIT_DOMAIN, EXIT_NUMERICAL = 2, 3, 4


class InputError(CompestError):
    """Bad file or flag supplied on the command line."""


def _delimiter(args) -> str:
    return "\t" if args.delimiter in ("tab", "\\t", "\t") else args.delimiter


def _read_counts(args):
    if not os.path.isfile(args.input):
        raise InputError(f"input file not found: {args.input}")
    return cio.read_counts(args.input, _delimiter(args))


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _tune(W, args, alphas, lambdas=None):
    grids = (lambdas, alphas) if lambdas is not None else default_grids(W, alphas=alphas)
    plan = make_cv_plan(W, args.k_folds, args.splits, grids, args.seed)
    base = SolverConfig(k_max=args.max_iter, eps=args.eps)
    return plan, select_tuning(W, plan, base, args.jobs)


def cmd_estimate(args) -> int:
    W = _read_counts(args)
    name = args.estimator
    report = {"estimator": name, "n": W.n, "p": W.p, "total_count": W.grand_total}
    trace = None
    if name == "mle":
        X = estimate_mle(W)
    elif name == "zr":
        X = estimate_zero_replacement(W)
    elif name == "svt":
        X = estimate_svt(W, threshold=args.svt_threshold, rank=args.svt_rank)
        report.update(svt_threshold=args.svt_threshold, svt_rank=args.svt_rank)
    else:
        alpha = args.alpha_x
        if args.lam in (None, "cv"):
            alphas = (alpha,) if alpha is not None else DEFAULT_ALPHAS
            plan, sel = _tune(W, args, alphas)
            lam, alpha = sel.lam, sel.alpha_x
            report["tuning"] = {"lambda": lam, "alpha_x": alpha, "risk": sel.risk,
                                "k_folds": plan.k_folds, "n_splits": plan.n_splits,
                                "seed": args.seed}
        else:
            alpha = 0.1 if alpha is None else alpha
            if args.lam == "theory":
                lam = default_lambda(W, SimplexBounds(alpha, args.beta_x), args.delta)
            else:
                try:
                    lam = float(args.lam)
                except ValueError:
                    raise InputError(f"--lambda expects a number, 'cv' or 'theory', got {args.lam!r}")
        cfg = SolverConfig(lam=lam, bounds=SimplexBounds(alpha, args.beta_x),
                           k_max=args.max_iter, eps=args.eps,
                           uniform_zero_rows=args.uniform_zero_rows)
        result = fit(W, cfg)
        X = result.estimate
        report.update(result.to_dict())
        trace = result.trace_csv()
    if name != "reg":
        report["has_zeros"] = bool(X.has_zeros)
        report["final_singular_values"] = [float(s) for s in singular_value_profile(X.values)]
    delim = _delimiter(args)
    cio.write_text(args.output, cio.matrix_csv(X.values, W.samples, W.taxa, delim))
    if args.report:
        cio.write_text(args.report, _json(report))
    if args.trace and trace is not None:
        cio.write_text(args.trace, trace)
    return 0


def _load_grid(path):
    if not os.path.isfile(path):
        raise InputError(f"grid file not found: {path}")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"grid file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise InputError("grid file must hold an object with 'lambdas' and 'alphas'")
    lambdas, alphas = doc.get("lambdas"), doc.get("alphas", list(DEFAULT_ALPHAS))
    if not lambdas or not alphas:
        raise InputError("grid file must list at least one lambda and one alpha_x")
    return [float(x) for x in lambdas], [float(a) for a in alphas]


def cmd_tune(args) -> int:
    W = _read_counts(args)
    if args.grid_file:
        lambdas, alphas = _load_grid(args.grid_file)
    else:
        lambdas, alphas = None, DEFAULT_ALPHAS
    plan, sel = _tune(W, args, alphas, lambdas)
    cio.write_text(args.risk_table, sel.table_csv())
    cio.write_text(args.selection, sel.summary_json(plan) + "\n")
    return 0


def _scenarios(args):
    out = []
    for p in args.p:
        for gamma in args.gamma:
            r = min(args.n, p) if args.full_rank else args.r
            out.append(SimScenario(n=args.n, p=p, r=r, gamma=gamma,
                                   replicates=args.replicates, seed=args.seed))
    return out


def cmd_simulate(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    for sc in _scenarios(args):
        tag = f"n{sc.n}_p{sc.p}_r{sc.r}_g{sc.gamma:g}"
        for rep in range(sc.replicates):
            comp_ss, count_ss, _ = replicate_streams(sc.seed, rep)
            X = generate_composition(sc, comp_ss).values
            W = generate_counts(X, sc.gamma, count_ss)
            base = os.path.join(args.out_dir, f"{tag}_rep{rep}")
            cio.write_text(f"{base}_counts.csv", cio.matrix_csv(W.values, integer=True))
            cio.write_text(f"{base}_truth.csv", cio.matrix_csv(X))
            if args.scatter:
                _write_scatter(base, X, W, args)
    return 0


def _write_scatter(base, X, W, args):
    """Truth-vs-estimate pairs and zero proportion vs depth for plotting."""
    spec = TuningSpec(k_folds=args.k_folds, n_splits=args.splits)
    grids = default_grids(W, spec.n_lambdas, spec.alphas)
    plan = make_cv_plan(W, spec.k_folds, spec.n_splits, grids, args.seed)
    sel = select_tuning(W, plan, SolverConfig())
    reg = fit(W, SolverConfig(lam=sel.lam, bounds=SimplexBounds(sel.alpha_x))).estimate.values
    zr = estimate_zero_replacement(W).values
    lines = ["sample,taxon,truth,count,zr,reg"]
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            lines.append(f"{i},{j},{cio.format_number(X[i, j])},{W.values[i, j]},"
                         f"{cio.format_number(zr[i, j])},{cio.format_number(reg[i, j])}")
    cio.write_text(f"{base}_scatter.csv", "\n".join(lines) + "\n")
    zero_frac = (np.asarray(W.values) == 0).mean(axis=1)
    lines = ["sample,depth,zero_fraction"]
    lines += [f"{i},{W.row_totals[i]},{cio.format_number(z)}" for i, z in enumerate(zero_frac)]
    cio.write_text(f"{base}_depth.csv", "\n".join(lines) + "\n")


def cmd_benchmark(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    tuning = TuningSpec(k_folds=args.k_folds, n_splits=args.splits,
                        n_lambdas=args.n_lambdas, alphas=tuple(args.alphas),
                        max_iter=args.max_iter, tol=args.eps)
    reports = []
    for sc in _scenarios(args):
        ests = args.estimators
        if ests is None:
            ests = ["reg", "zr"] if sc.full_rank() else ["reg", "zr", "svt"]
        logger.info("benchmark n=%d p=%d r=%d gamma=%g", sc.n, sc.p, sc.r, sc.gamma)
        reports.append(run_benchmark(sc, ests, tuning, args.jobs))
    cio.write_text(os.path.join(args.out_dir, "report.csv"), report_csv(reports))
    cio.write_text(os.path.join(args.out_dir, "summary.csv"), summary_csv(reports))
    cio.write_text(os.path.join(args.out_dir, "selections.csv"), selections_csv(reports))
    failures = [(r.scenario, f) for r in reports for f in r.failures]
    for sc, (rep, est, msg) in failures:
        print(f"warning: p={sc.p} gamma={sc.gamma:g} replicate {rep} {est}: {msg}",
              file=sys.stderr)
    return 0


def cmd_diversity(args) -> int:
    if not os.path.isfile(args.input):
        raise InputError(f"input file not found: {args.input}")
    X = cio.read_composition(args.input, delimiter=_delimiter(args))
    cols, names = [], []
    if args.index in ("shannon", "both"):
        cols.append(shannon_index(X.values))
        names.append("shannon")
    if args.index in ("simpson", "both"):
        cols.append(simpson_index(X.values))
        names.append("simpson")
    samples = X.samples or [f"s{i + 1}" for i in range(X.n)]
    lines = [",".join(["sample_id", *names])]
    for i, s in enumerate(samples):
        lines.append(",".join([s, *(cio.format_number(c[i]) for c in cols)]))
    cio.write_text(args.output, "\n".join(lines) + "\n")
    return 0


def _add_io(p):
    p.add_argument("--delimiter", default=",", help="field separator; 'tab' for TSV")


def _add_solver(p):
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--eps", type=float, default=1e-7)


def _add_cv(p):
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--splits", type=int, default=5)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)


def _add_scenario(p):
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, nargs="+", default=[50])
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--gamma", type=float, nargs="+", default=[1.0])
    p.add_argument("--full-rank", action="store_true", help="use r = min(n, p)")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compest",
        description="Low-rank composition estimation from microbiome count tables.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a composition matrix from counts")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="composition CSV")
    p.add_argument("--report", help="fit report JSON")
    p.add_argument("--trace", help="objective trace CSV (reg only)")
    p.add_argument("--estimator", choices=["mle", "zr", "svt", "reg"], default="reg")
    p.add_argument("--lambda", dest="lam", default=None,
                   help="penalty weight, 'cv' (default) or 'theory'")
    p.add_argument("--alpha-x", type=float, default=None)
    p.add_argument("--beta-x", type=float, default=None, help="default: p (inactive)")
    p.add_argument("--delta", type=float, default=7.0, help="multiplier for --lambda theory")
    p.add_argument("--svt-threshold", type=float, default=None)
    p.add_argument("--svt-rank", type=int, default=None)
    p.add_argument("--uniform-zero-rows", action="store_true")
    _add_solver(p)
    _add_cv(p)
    _add_io(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("tune", help="cross-validate (lambda, alpha_x)")
    p.add_argument("input")
    p.add_argument("--grid-file", help='JSON {"lambdas": [...], "alphas": [...]}')
    p.add_argument("--risk-table", required=True)
    p.add_argument("--selection", required=True)
    _add_solver(p)
    _add_cv(p)
    _add_io(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("simulate", help="write synthetic counts and truth")
    _add_scenario(p)
    p.add_argument("--scatter", action="store_true",
                   help="also write truth-vs-estimate and depth CSVs")
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--splits", type=int, default=3)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="compare estimators on simulated data")
    _add_scenario(p)
    p.add_argument("--estimators", nargs="+",
                   choices=["reg", "zr", "svt", "svt_best", "mle"], default=None)
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--splits", type=int, default=3)
    p.add_argument("--n-lambdas", type=int, default=4)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.1, 0.5])
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    _add_solver(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("diversity", help="Shannon and Simpson indices per sample")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--index", choices=["shannon", "simpson", "both"], default="both")
    _add_io(p)
    p.set_defaults(func=cmd_diversity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ValidationError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (NumericalError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CompestError as exc:
        cause = exc.__cause__
        code = EXIT_DOMAIN if isinstance(cause, DomainError) else EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
