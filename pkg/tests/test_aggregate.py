"""Aggregation objective, solver certificates and selection baselines."""

import warnings

import numpy as np
import pytest

from conftest import dense_smoother, random_problem

from qagg.aggregate import (
    SimplexWeights,
    certify_kkt,
    cp_criterion,
    cp_values,
    excess_bound_gap,
    exponential_weights,
    member_fits,
    project_to_simplex,
    q_gradient,
    q_objective,
    q_objective_penalized,
    select_cp,
    select_gcv,
    solve_q_aggregation,
)
from qagg.smoother import FamilyUnion
from qagg.spectral import (
    DesignProblem,
    SpectralFamily,
    apply_member,
    build_tikhonov_family,
    degrees_of_freedom,
)


def project_on_simplex_bisection(v):
    """Independent projection oracle via bisection on the threshold."""
    v = np.asarray(v, dtype=float)

    def mass(tau):
        return np.maximum(v - tau, 0.0).sum()

    lo, hi = v.min() - 1.0, v.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0.0)


def random_interior_theta(rng, M):
    theta = rng.uniform(0.05, 1.0, size=M)
    return theta / theta.sum()


class TestProjectToSimplex:
    def test_matches_bisection_oracle(self, rng):
        for _ in range(50):
            M = int(rng.integers(1, 30))
            v = rng.standard_normal(M) * float(rng.uniform(0.1, 20))
            got = project_to_simplex(v)
            expected = project_on_simplex_bisection(v)
            assert np.abs(got - expected).max() < 1e-9
            assert got.min() >= 0.0
            assert abs(got.sum() - 1.0) < 1e-12

    def test_interior_point_is_fixed(self):
        theta = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_to_simplex(theta), theta, atol=1e-15)


class TestSimplexWeights:
    def test_renormalizes(self):
        w = SimplexWeights(theta=[2.0, 2.0], fitted=np.zeros(3))
        np.testing.assert_allclose(w.theta, [0.5, 0.5])
        assert abs(w.theta.sum() - 1.0) < 1e-12

    def test_rejects_negative_mass(self):
        with pytest.raises(ValueError, match="nonnegative"):
            SimplexWeights(theta=[0.5, -0.5], fitted=np.zeros(3))


class TestCpCriterion:
    def test_zero_smoother_gives_response_norm(self, rng):
        family = SpectralFamily(basis=np.eye(3)[:, :2], sing_vals=[1, 1], alphas=[[0.0, 0.0]])
        y = rng.standard_normal(3)
        assert abs(cp_criterion(family, 0, y, 1.0) - y @ y) < 1e-12

    def test_saturated_fit_costs_twice_variance_times_n(self, rng):
        n = 5
        problem = DesignProblem(X=np.eye(n), K=np.eye(n), lambdas=[0.0])
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(n)
        sigma = 0.6
        assert abs(cp_criterion(family, 0, y, sigma) - 2 * sigma**2 * n) < 1e-12

    def test_matches_dense(self, rng):
        problem = random_problem(rng, n=6, p=4, M=3)
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(6)
        sigma = 0.9
        for j, lam in enumerate(problem.lambdas):
            A = dense_smoother(problem.X, problem.K, lam)
            expected = np.sum((A @ y - y) ** 2) + 2 * sigma**2 * np.trace(A)
            assert abs(cp_criterion(family, j, y, sigma) - expected) < 1e-10

    def test_sigma_must_be_positive(self, small_family):
        _, family = small_family
        with pytest.raises(ValueError, match="sigma"):
            cp_values(family, np.zeros(5), 0.0)


class TestQObjective:
    def test_single_member_equals_cp(self, rng):
        problem = random_problem(rng, n=6, p=4, M=1)
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(6)
        assert abs(
            q_objective(family, np.array([1.0]), y, 1.0) - cp_criterion(family, 0, y, 1.0)
        ) < 1e-12

    def test_vertices_equal_cp(self, rng, small_family):
        _, family = small_family
        y = rng.standard_normal(5)
        for k in range(3):
            theta = np.zeros(3)
            theta[k] = 1.0
            for form in (q_objective, q_objective_penalized):
                assert abs(form(family, theta, y, 0.8) - cp_criterion(family, k, y, 0.8)) < 1e-10

    def test_convex_and_penalized_forms_agree(self, rng):
        for _ in range(25):
            problem = random_problem(rng, n=int(rng.integers(4, 10)), p=3, M=int(rng.integers(2, 5)))
            family = build_tikhonov_family(problem)
            y = rng.standard_normal(family.n) * float(rng.uniform(0.5, 4))
            theta = random_interior_theta(rng, family.member_count)
            sigma = float(rng.uniform(0.3, 2.0))
            a = q_objective(family, theta, y, sigma)
            b = q_objective_penalized(family, theta, y, sigma)
            assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    def test_forms_agree_on_union(self, rng):
        f1 = build_tikhonov_family(random_problem(rng, 7, 3, 2), family_id="a")
        f2 = build_tikhonov_family(random_problem(rng, 7, 4, 3), family_id="b")
        union = FamilyUnion(families=(f1, f2))
        y = rng.standard_normal(7)
        theta = random_interior_theta(rng, 5)
        a = q_objective(union, theta, y, 1.1)
        b = q_objective_penalized(union, theta, y, 1.1)
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))

    def test_convexity_witness(self, rng, small_family):
        _, family = small_family
        y = rng.standard_normal(5)
        for _ in range(20):
            th1 = random_interior_theta(rng, 3)
            th2 = random_interior_theta(rng, 3)
            t = float(rng.uniform())
            mix = q_objective(family, t * th1 + (1 - t) * th2, y, 1.0)
            bound = t * q_objective(family, th1, y, 1.0) + (1 - t) * q_objective(
                family, th2, y, 1.0
            )
            assert mix <= bound + 1e-9


class TestGradient:
    def test_matches_central_differences(self, rng):
        for _ in range(10):
            problem = random_problem(rng, n=8, p=4, M=4)
            family = build_tikhonov_family(problem)
            y = rng.standard_normal(8) * 2.0
            sigma = float(rng.uniform(0.5, 1.5))
            theta = random_interior_theta(rng, 4)
            grad = q_gradient(family, theta, y, sigma)
            h = 1e-6
            for k in range(4):
                e = np.zeros(4)
                e[k] = h
                fd = (
                    q_objective(family, theta + e, y, sigma)
                    - q_objective(family, theta - e, y, sigma)
                ) / (2 * h)
                assert abs(grad[k] - fd) <= 1e-5 * max(1.0, abs(fd))


class TestSolver:
    def test_single_member(self, rng):
        problem = random_problem(rng, n=6, p=3, M=1)
        family = build_tikhonov_family(problem)
        report = solve_q_aggregation(family, rng.standard_normal(6), 1.0)
        np.testing.assert_array_equal(report.weights.theta, [1.0])
        assert report.converged

    def test_duplicate_members_reach_single_member_objective(self, rng):
        basis = np.linalg.qr(rng.standard_normal((6, 3)))[0]
        alpha = np.array([0.7, 0.5, 0.2])
        single = SpectralFamily(basis=basis, sing_vals=np.ones(3), alphas=[alpha])
        doubled = SpectralFamily(basis=basis, sing_vals=np.ones(3), alphas=[alpha, alpha])
        y = rng.standard_normal(6)
        rep1 = solve_q_aggregation(single, y, 0.9)
        rep2 = solve_q_aggregation(doubled, y, 0.9)
        assert rep2.converged
        assert abs(rep1.objective - rep2.objective) < 1e-10

    def test_matches_grid_search_m3(self, rng):
        for _ in range(5):
            problem = random_problem(rng, n=8, p=4, M=3)
            family = build_tikhonov_family(problem)
            y = rng.standard_normal(8)
            sigma = 1.0
            report = solve_q_aggregation(family, y, sigma)
            assert report.converged
            # independent oracle: evaluate the objective from member fits
            fits = np.stack([apply_member(family, j, y) for j in range(3)])
            df = np.array([degrees_of_freedom(family, j) for j in range(3)])
            resid = np.einsum("ij,ij->i", fits - y, fits - y)
            step = 1e-3
            t1 = np.arange(0.0, 1.0 + step / 2, step)
            best = np.inf
            for a in t1:
                t2 = np.arange(0.0, 1.0 - a + step / 2, step)
                theta = np.column_stack([np.full_like(t2, a), t2, 1.0 - a - t2])
                agg = theta @ fits
                vals = (
                    0.5 * np.einsum("ij,ij->i", agg - y, agg - y)
                    + 2 * sigma**2 * theta @ df
                    + 0.5 * theta @ resid
                )
                best = min(best, float(vals.min()))
            assert report.objective <= best + 1e-7
            assert abs(report.objective - best) < 1e-5

    def test_certificate_at_solution(self, rng):
        for _ in range(10):
            problem = random_problem(rng, n=10, p=5, M=6)
            family = build_tikhonov_family(problem)
            y = rng.standard_normal(10) * float(rng.uniform(0.5, 3))
            report = solve_q_aggregation(family, y, 1.0)
            assert report.kkt_residual >= -1e-7 * (1.0 + abs(report.objective))
            recheck = certify_kkt(family, report.weights.theta, y, 1.0)
            assert recheck >= -1e-7 * (1.0 + abs(report.objective))

    def test_solver_on_union(self, rng):
        f1 = build_tikhonov_family(random_problem(rng, 9, 4, 3), family_id="a")
        f2 = build_tikhonov_family(random_problem(rng, 9, 5, 4), family_id="b")
        union = FamilyUnion(families=(f1, f2))
        y = rng.standard_normal(9)
        report = solve_q_aggregation(union, y, 1.0)
        assert report.converged
        np.testing.assert_allclose(
            report.weights.fitted,
            member_fits(union, y).T @ report.weights.theta,
            atol=1e-12,
        )

    def test_sigma_validation(self, small_family):
        _, family = small_family
        with pytest.raises(ValueError, match="sigma"):
            solve_q_aggregation(family, np.zeros(5), -1.0)


class TestCertifyKkt:
    def test_negative_at_suboptimal_vertex(self, rng):
        problem = random_problem(rng, n=8, p=4, M=3)
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(8)
        cp = cp_values(family, y, 1.0)
        worst = int(np.argmax(cp))
        theta = np.zeros(3)
        theta[worst] = 1.0
        if cp.max() - cp.min() > 1e-6:
            assert certify_kkt(family, theta, y, 1.0) < 0.0


class TestSelectCp:
    def test_single_member(self, rng):
        problem = random_problem(rng, n=5, p=3, M=1)
        family = build_tikhonov_family(problem)
        assert select_cp(family, rng.standard_normal(5), 1.0) == 0

    def test_zero_response_selects_smallest_df(self, rng):
        problem = random_problem(rng, n=6, p=4, M=4)
        family = build_tikhonov_family(problem)
        assert select_cp(family, np.zeros(6), 1.0) == 3  # largest lambda

    def test_matches_dense_evaluation(self, rng):
        problem = random_problem(rng, n=7, p=4, M=5)
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(7)
        sigma = 0.8
        dense_cp = []
        for lam in problem.lambdas:
            A = dense_smoother(problem.X, problem.K, lam)
            dense_cp.append(np.sum((A @ y - y) ** 2) + 2 * sigma**2 * np.trace(A))
        assert select_cp(family, y, sigma) == int(np.argmin(dense_cp))


class TestSelectGcv:
    def test_single_member(self, rng):
        problem = random_problem(rng, n=5, p=3, M=1)
        family = build_tikhonov_family(problem)
        assert select_gcv(family, rng.standard_normal(5)) == 0

    def test_interpolating_member_excluded(self, rng):
        problem = DesignProblem(X=np.eye(3), K=np.eye(3), lambdas=[0.0, 1.0])
        family = build_tikhonov_family(problem)  # member 0 has trace n
        y = rng.standard_normal(3)
        with pytest.warns(RuntimeWarning, match="degenerate denominator"):
            assert select_gcv(family, y) == 1

    def test_all_excluded_raises(self):
        problem = DesignProblem(X=np.eye(2), K=np.eye(2), lambdas=[0.0])
        family = build_tikhonov_family(problem)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(ValueError, match="GCV"):
                select_gcv(family, np.ones(2))

    def test_matches_dense_evaluation(self, rng):
        problem = random_problem(rng, n=8, p=4, M=5)
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(8)
        scores = []
        for lam in problem.lambdas:
            A = dense_smoother(problem.X, problem.K, lam)
            scores.append(np.sum((A @ y - y) ** 2) / (8 - np.trace(A)) ** 2)
        assert select_gcv(family, y) == int(np.argmin(scores))


class TestExponentialWeights:
    def test_identical_members_get_uniform_weights(self, rng):
        basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        alpha = np.array([0.6, 0.3])
        family = SpectralFamily(
            basis=basis, sing_vals=np.ones(2), alphas=[alpha, alpha, alpha]
        )
        w = exponential_weights(family, rng.standard_normal(5), 1.0)
        np.testing.assert_allclose(w.theta, np.full(3, 1 / 3), atol=1e-14)

    def test_small_temperature_concentrates_on_cp_winner(self, rng):
        problem = random_problem(rng, n=8, p=4, M=4)
        family = build_tikhonov_family(problem)
        y = rng.standard_normal(8) * 2
        winner = select_cp(family, y, 1.0)
        w = exponential_weights(family, y, 1.0, temperature=1e-8)
        assert np.all(np.isfinite(w.theta))
        assert w.theta[winner] > 1.0 - 1e-12

    def test_closed_form_geometric_weights(self):
        # one-coordinate members with criterion values {c, c + t log 2, c + t log 4}
        y = np.array([2.0])
        sigma, t = 1.0, 0.5
        targets = np.array([3.0, 3.0 + t * np.log(2), 3.0 + t * np.log(4)])
        # solve (a - 1)^2 y^2 + 2 sigma^2 a = target for a in [0, 0.75]
        alphas = []
        for c in targets:
            roots = np.roots([y[0] ** 2, -2 * y[0] ** 2 + 2 * sigma**2, y[0] ** 2 - c])
            alphas.append(float(min(r for r in roots if 0 <= r <= 0.75)))
        family = SpectralFamily(
            basis=np.eye(1), sing_vals=[1.0], alphas=np.array(alphas)[:, None]
        )
        got = cp_values(family, y, sigma)
        np.testing.assert_allclose(got, targets, atol=1e-12)
        w = exponential_weights(family, y, sigma, temperature=t)
        np.testing.assert_allclose(w.theta, [4 / 7, 2 / 7, 1 / 7], atol=1e-12)


class TestExcessBound:
    """Pointwise excess inequality on simulated draws with known mean and noise."""

    def test_holds_at_certified_solutions(self, rng):
        problem = random_problem(rng, n=12, p=6, M=8)
        family = build_tikhonov_family(problem)
        mu = 1.5 * family.basis @ (np.arange(1, family.rank + 1) ** -1.0)
        sigma = 1.0
        for _ in range(50):
            y = mu + sigma * rng.standard_normal(12)
            report = solve_q_aggregation(family, y, sigma)
            gap = excess_bound_gap(family, report.weights.theta, y, sigma, mu)
            slack = max(0.0, -report.kkt_residual) + 1e-9 * (1.0 + abs(report.objective))
            assert gap <= slack

    def test_detects_violations_for_bad_weights(self, rng):
        # far-from-optimal weights should eventually break the bound
        problem = random_problem(rng, n=10, p=5, M=4)
        family = build_tikhonov_family(problem)
        mu = np.zeros(10)
        worst = 0.0
        for _ in range(20):
            y = mu + rng.standard_normal(10)
            theta = np.zeros(4)
            theta[0] = 1.0  # smallest lambda: heavy overfit when mu = 0
            worst = max(worst, excess_bound_gap(family, theta, y, 1.0, mu))
        assert worst > 0.0
