import json

import numpy as np
import pytest
from scipy.optimize import minimize

from compest.core import SimplexBounds, validate_counts
from compest.exceptions import ConfigError, DomainError
from compest.metrics import frobenius_sq, kl_matrix
from compest.projection import project_matrix, project_row
from compest.solver import (
    SolverConfig,
    fit,
    grad_neg_log_likelihood,
    initial_point,
    line_search_gap,
    neg_log_likelihood,
    prox_step,
    soft_threshold_svd,
    with_params,
)


def random_counts(rng, n, p, scale=20):
    W = rng.poisson(scale * rng.dirichlet(np.ones(p), size=n))
    W[:, 0] += 1  # keep every row nonempty
    return W


class TestLikelihood:
    def test_closed_form(self):
        assert neg_log_likelihood([[0.5, 0.5]], [[1, 1]]) == pytest.approx(np.log(2))
        assert neg_log_likelihood([[0.5, 0.5]], [[0, 4]]) == pytest.approx(np.log(2))

    def test_gradient_examples(self):
        np.testing.assert_allclose(grad_neg_log_likelihood([[0.5, 0.5]], [[1, 1]]), [[-1, -1]])
        np.testing.assert_allclose(grad_neg_log_likelihood([[0.5, 0.5]], [[0, 4]]), [[0, -2]])

    def test_zero_where_count_positive(self):
        with pytest.raises(DomainError):
            neg_log_likelihood([[0.0, 1.0]], [[1, 1]])
        with pytest.raises(DomainError):
            grad_neg_log_likelihood([[0.0, 1.0]], [[1, 1]])

    def test_zero_allowed_where_count_zero(self):
        assert np.isfinite(neg_log_likelihood([[0.0, 1.0]], [[0, 3]]))

    def test_finite_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(20):
            n, p = rng.integers(1, 6), rng.integers(2, 6)
            W = random_counts(rng, n, p)
            X = rng.uniform(0.2, 1.0, size=(n, p))
            G = grad_neg_log_likelihood(X, W)
            fd = np.zeros_like(X)
            for idx in np.ndindex(X.shape):
                E = np.zeros_like(X)
                E[idx] = h
                fd[idx] = (neg_log_likelihood(X + E, W) - neg_log_likelihood(X - E, W)) / (2 * h)
            np.testing.assert_allclose(G, fd, rtol=1e-6, atol=1e-9)

    def test_mle_is_minimum_on_simplex(self):
        rng = np.random.default_rng(1)
        W = np.array([[3, 5, 2, 7]])
        X = W / W.sum()
        base = neg_log_likelihood(X, W)
        for _ in range(200):
            d = rng.normal(size=4)
            d -= d.mean()  # stay on the affine hull
            assert neg_log_likelihood(X + 1e-3 * d, W) > base


class TestSoftThreshold:
    def test_diagonal(self):
        np.testing.assert_allclose(soft_threshold_svd(np.diag([3.0, 1.0]), 2.0),
                                   np.diag([1.0, 0.0]), atol=1e-15)

    def test_identity_at_zero(self):
        M = np.random.default_rng(2).normal(size=(4, 6))
        np.testing.assert_allclose(soft_threshold_svd(M, 0.0), M, atol=1e-10)

    def test_large_tau_zero(self):
        M = np.random.default_rng(3).normal(size=(5, 3))
        s = np.linalg.svd(M, compute_uv=False)
        np.testing.assert_array_equal(soft_threshold_svd(M, s[0] * (1 + 1e-12)), np.zeros_like(M))

    def test_negative_tau(self):
        with pytest.raises(ConfigError):
            soft_threshold_svd(np.eye(2), -1.0)

    def test_is_prox_of_nuclear_norm(self):
        # Prox property: Z minimises 0.5||Z - M||^2 + tau ||Z||_*; compare with
        # random perturbations of the returned point.
        rng = np.random.default_rng(4)
        M, tau = rng.normal(size=(4, 5)), 0.7

        def obj(Z):
            return 0.5 * np.sum((Z - M) ** 2) + tau * np.linalg.svd(Z, compute_uv=False).sum()

        Z = soft_threshold_svd(M, tau)
        for _ in range(200):
            assert obj(Z) <= obj(Z + 1e-3 * rng.normal(size=Z.shape)) + 1e-12


class TestProxStep:
    def test_hand_example(self):
        cfg = SolverConfig(lam=0.0, bounds=SimplexBounds(0.0, 2.0))
        np.testing.assert_allclose(prox_step([[0.5, 0.5]], [[1, 1]], 1.0, cfg), [[0.5, 0.5]])

    def test_huge_curvature_is_projection(self):
        rng = np.random.default_rng(5)
        y = rng.uniform(0.1, 1, size=(3, 4))
        cfg = SolverConfig(lam=0.0, bounds=SimplexBounds(0.1))
        out = prox_step(y, random_counts(rng, 3, 4), 1e12, cfg)
        np.testing.assert_allclose(out, project_matrix(y, cfg.bounds).values, atol=1e-9)


class TestLineSearchGap:
    def test_zero_at_same_point(self):
        X = np.array([[0.2, 0.3, 0.5]])
        assert line_search_gap(X, X, [[1, 2, 3]], 5.0) == 0.0

    def test_bregman_nonnegative(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            W = random_counts(rng, 3, 4)
            A = rng.dirichlet(np.ones(4), size=3)
            B = rng.dirichlet(np.ones(4), size=3)
            assert line_search_gap(A, B, W, 0.0) >= -1e-12


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(lam=-1), dict(l0=0), dict(gamma=1.0), dict(rho=3),
                                    dict(k_max=-1), dict(eps=-1), dict(window=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SolverConfig(**kw)

    def test_with_params(self):
        cfg = with_params(SolverConfig(bounds=SimplexBounds(0.01, 3.0)), lam=0.2, alpha_x=0.5)
        assert cfg.lam == 0.2 and cfg.bounds.alpha_x == 0.5 and cfg.bounds.beta_x == 3.0


class TestFit:
    def test_kmax_zero_returns_initializer(self):
        W = validate_counts([[3, 0, 2], [1, 1, 1]])
        cfg = SolverConfig(lam=0.1, bounds=SimplexBounds(0.3), k_max=0)
        rep = fit(W, cfg)
        assert not rep.converged and rep.iterations == 0
        np.testing.assert_allclose(rep.estimate.values, initial_point(W, cfg))

    def test_single_row_unpenalised_is_mle(self):
        for w in ([3, 5, 2, 7], [1, 40, 2, 7, 9]):
            w = np.array([w])
            rep = fit(w, SolverConfig(lam=0.0, bounds=SimplexBounds(0.01)))
            assert rep.converged
            np.testing.assert_allclose(rep.estimate.values[0], w[0] / w.sum(), atol=1e-6)

    def test_single_row_unpenalised_with_zero_count(self):
        # The zero entry sits at the lower bound; the others share the rest in
        # proportion to their counts (stationarity of the multinomial loss).
        w = np.array([[0, 3, 5, 1]])
        b = SimplexBounds(0.01)
        lo = b.lower(4)
        expected = np.r_[lo, (1 - lo) * np.array([3, 5, 1]) / 9]
        rep = fit(w, SolverConfig(lam=0.0, bounds=b, eps=1e-13, k_max=10000))
        np.testing.assert_allclose(rep.estimate.values[0], expected, atol=1e-6)

    def _slsqp(self, w, lam, b):
        N, p = w.sum(), w.size

        def obj(x):
            return -np.sum(w * np.log(x)) / N + lam * np.linalg.norm(x)

        ref = minimize(obj, np.full(p, 1 / p), method="SLSQP",
                       bounds=[(b.lower(p), 1.0)] * p,
                       constraints=[{"type": "eq", "fun": lambda x: x.sum() - 1}],
                       options={"ftol": 1e-15, "maxiter": 1000})
        return ref.x, obj

    def test_unpenalised_box_matches_generic_optimiser(self):
        # With lam = 0 the proximal map is exactly the projection, so the fit
        # must land on the constrained optimum found by SLSQP.
        w = np.array([4.0, 1.0, 0.0, 9.0, 2.0])
        b = SimplexBounds(0.5)
        ref, _ = self._slsqp(w, 0.0, b)
        rep = fit(w[None, :].astype(int), SolverConfig(lam=0.0, bounds=b, eps=1e-13, k_max=10000))
        np.testing.assert_allclose(rep.estimate.values[0], ref, atol=1e-6)

    def test_penalised_objective_close_to_generic_optimiser(self):
        # Thresholding then projecting is not the exact proximal map of the
        # penalty plus the constraint, so with lam > 0 the fixed point sits
        # slightly above the constrained optimum.
        w = np.array([4.0, 1.0, 0.0, 9.0, 2.0])
        b = SimplexBounds(0.2)
        ref, obj = self._slsqp(w, 0.3, b)
        rep = fit(w[None, :].astype(int), SolverConfig(lam=0.3, bounds=b, eps=1e-12, k_max=5000))
        x = rep.estimate.values[0]
        assert obj(ref) <= obj(x) <= obj(ref) + 1e-4

    def test_solution_beats_feasible_perturbations(self):
        rng = np.random.default_rng(7)
        W = random_counts(rng, 8, 6, scale=10)
        cfg = SolverConfig(lam=0.05, bounds=SimplexBounds(0.1), eps=1e-10)
        X = fit(W, cfg).estimate.values

        def obj(Z):
            return neg_log_likelihood(Z, W) + cfg.lam * np.linalg.svd(Z, compute_uv=False).sum()

        best = obj(X)
        for _ in range(100):
            Z = project_matrix(X + 1e-3 * rng.normal(size=X.shape), cfg.bounds).values
            assert best <= obj(Z) + 1e-9

    def test_fixed_point_of_prox_map(self):
        rng = np.random.default_rng(8)
        W = random_counts(rng, 10, 7)
        cfg = SolverConfig(lam=0.02, bounds=SimplexBounds(0.1), eps=1e-12, k_max=5000)
        rep = fit(W, cfg)
        X = rep.estimate.values
        np.testing.assert_allclose(prox_step(X, W, rep.curvature_trace[-1], cfg), X, atol=1e-6)

    def test_accepted_steps_majorise(self):
        rng = np.random.default_rng(9)
        rep = fit(random_counts(rng, 6, 5), SolverConfig(lam=0.05, bounds=SimplexBounds(0.1)))
        slack = 1e-13 * (1 + max(abs(v) for v in rep.objective_trace))
        assert all(g <= slack for g in rep.gap_trace)
        assert all(np.diff(rep.curvature_trace) >= 0)

    def test_estimate_feasible(self):
        rng = np.random.default_rng(10)
        b = SimplexBounds(0.2, 3.0)
        X = fit(random_counts(rng, 7, 9), SolverConfig(lam=0.1, bounds=b)).estimate.values
        np.testing.assert_allclose(X.sum(axis=1), 1.0, atol=1e-12)
        assert X.min() >= b.lower(9) - 1e-15 and X.max() <= b.upper(9) + 1e-15

    def test_penalty_lowers_rank(self):
        rng = np.random.default_rng(11)
        W = random_counts(rng, 20, 10)
        s_small = fit(W, SolverConfig(lam=1e-4, bounds=SimplexBounds(0.1))).final_singular_values
        s_big = fit(W, SolverConfig(lam=0.2, bounds=SimplexBounds(0.1))).final_singular_values
        assert np.sum(s_big > 1e-8) < np.sum(s_small > 1e-8)

    def test_zero_row_needs_flag(self):
        W = [[0, 0, 0], [1, 2, 3]]
        with pytest.raises(DomainError):
            fit(W, SolverConfig(lam=0.1, bounds=SimplexBounds(0.1)))
        cfg = SolverConfig(lam=0.1, bounds=SimplexBounds(0.1), uniform_zero_rows=True, k_max=0)
        np.testing.assert_allclose(fit(W, cfg).estimate.values[0], 1 / 3)
        rep = fit(W, SolverConfig(lam=0.1, bounds=SimplexBounds(0.1), uniform_zero_rows=True))
        np.testing.assert_allclose(rep.estimate.values.sum(axis=1), 1.0, atol=1e-12)

    def test_alpha_zero_rejected(self):
        with pytest.raises(ConfigError):
            fit([[1, 2]], SolverConfig(lam=0.1, bounds=SimplexBounds(0.0)))

    def test_report_serialises(self):
        rep = fit([[1, 2, 3], [3, 2, 1]], SolverConfig(lam=0.01, bounds=SimplexBounds(0.1)))
        doc = json.loads(json.dumps(rep.to_dict()))
        assert doc["iterations"] == rep.iterations
        lines = rep.trace_csv().splitlines()
        assert lines[0] == "iteration,objective,L_k,gap"
        assert len(lines) == rep.iterations + 2
        assert float(lines[-1].split(",")[1]) == rep.objective_trace[-1]


class TestKLFrobeniusSandwich:
    def test_random_pairs(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            n, p = rng.integers(1, 6), rng.integers(2, 10)
            b = SimplexBounds(rng.uniform(0.05, 1), rng.uniform(1, p))
            A = project_matrix(rng.normal(size=(n, p)), b).values
            B = project_matrix(rng.normal(size=(n, p)), b).values
            D, F = kl_matrix(A, B), frobenius_sq(A, B)
            a, be = b.alpha_x, b.resolve_beta(p)
            assert 2 * a ** 2 / (be * p) * D <= F <= 2 * be ** 2 / (a * p) * D
