"""
Unit tests for the dense active-set QP solver.
"""
import numpy as np
import pytest

from dcm_step_planner import qp
from dcm_step_planner.qp import (
    DegenerateError, InfeasibleError, QpProblem, SingularKktError,
    enumerate_active_sets, solve, solve_equality_kkt,
)


def random_problem(rng, n=5, m_in=6, m_eq=2):
    """Strictly convex QP with a known interior point."""
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    g = rng.normal(size=n) * 3.0
    x_feasible = rng.normal(size=n)
    A_in = rng.normal(size=(m_in, n))
    b_in = A_in @ x_feasible - rng.uniform(0.0, 1.0, size=m_in)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ x_feasible
    return QpProblem(H, g, A_in, b_in, A_eq, b_eq)


def problem_with_repeated_rows(rng, n=5):
    """Random QP with one row pinned from both sides and two rows repeated."""
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    g = rng.normal(size=n) * 3.0
    x_feasible = rng.normal(size=n)
    a = rng.normal(size=(3, n))
    A_in = np.vstack([a[0], -a[0], a[1], a[1], a[2], a[2]])
    b_in = np.array([
        a[0] @ x_feasible,
        -(a[0] @ x_feasible),
        a[1] @ x_feasible - 0.3,
        a[1] @ x_feasible - 0.3,
        a[2] @ x_feasible - 0.2,
        a[2] @ x_feasible - 0.7,
    ])
    A_eq = rng.normal(size=(1, n))
    return QpProblem(H, g, A_in, b_in, A_eq, A_eq @ x_feasible)


class TestQpProblem:
    """Test cases for QpProblem validation."""

    def test_empty_constraints(self):
        problem = QpProblem(np.eye(2), [1.0, 2.0])

        assert problem.m_in == 0
        assert problem.m_eq == 0
        assert problem.A_in.shape == (0, 2)

    def test_rejects_asymmetric_hessian(self):
        with pytest.raises(ValueError, match="H must be symmetric"):
            QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), [0.0, 0.0])

    def test_rejects_mismatched_rows(self):
        with pytest.raises(ValueError, match="disagree in length"):
            QpProblem(np.eye(2), [0, 0], A_in=[[1.0, 0.0]], b_in=[1.0, 2.0])

    def test_rejects_too_many_equalities(self):
        with pytest.raises(ValueError, match="more equality constraints than variables"):
            QpProblem(np.eye(1), [0.0], A_eq=[[1.0], [2.0]], b_eq=[0.0, 0.0])

    def test_objective_and_offset(self):
        problem = QpProblem(2 * np.eye(2), [-2.0, 0.0], offset=1.0)

        assert problem.objective(np.array([1.0, 0.0])) == pytest.approx(0.0)


class TestSolveEqualityKkt:
    """Test cases for the equality-constrained KKT solve."""

    def test_projection_example(self):
        """Test min 1/2|x|^2 with x_1 = 1."""
        x, lam = solve_equality_kkt(np.eye(2), np.zeros(2), np.array([[1.0, 0.0]]), np.array([1.0]))

        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(lam, [-1.0], atol=1e-15)

    def test_unconstrained(self):
        x, lam = solve_equality_kkt(np.diag([2.0, 4.0]), np.array([-2.0, -4.0]))

        np.testing.assert_allclose(x, [1.0, 1.0])
        assert lam.size == 0

    def test_singular_hessian(self):
        with pytest.raises(SingularKktError) as exc_info:
            solve_equality_kkt(np.zeros((2, 2)), np.zeros(2))

        assert exc_info.value.condition_number > qp.KKT_CONDITION_LIMIT

    def test_dependent_constraints(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0]])
        with pytest.raises(SingularKktError):
            solve_equality_kkt(np.eye(2), np.zeros(2), A, np.array([1.0, 2.0]))


class TestSolve:
    """Test cases for the active-set solver."""

    def test_single_bound(self):
        """Test min x^2 subject to x >= 1."""
        problem = QpProblem([[2.0]], [0.0], A_in=[[1.0]], b_in=[1.0])
        solution = solve(problem)

        assert solution.x == pytest.approx([1.0])
        assert solution.u == pytest.approx([2.0])
        assert solution.active_set == (0,)
        assert solution.objective == pytest.approx(1.0)

    def test_inactive_bound(self):
        problem = QpProblem([[2.0]], [-4.0], A_in=[[1.0]], b_in=[1.0])
        solution = solve(problem)

        assert solution.x == pytest.approx([2.0])
        assert solution.u == pytest.approx([0.0])
        assert solution.active_set == ()

    def test_equality_multiplier_sign(self):
        """Test min 1/2|x|^2 with x_1 = 1 gives w = -1."""
        problem = QpProblem(np.eye(2), np.zeros(2), A_eq=[[1.0, 0.0]], b_eq=[1.0])
        solution = solve(problem)

        np.testing.assert_allclose(solution.x, [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(solution.w, [-1.0], atol=1e-12)

    def test_infeasible_bounds(self):
        """Test x >= 1 together with x <= 0."""
        problem = QpProblem([[2.0]], [0.0], A_in=[[1.0], [-1.0]], b_in=[1.0, 0.0])

        with pytest.raises(InfeasibleError) as exc_info:
            solve(problem)

        assert exc_info.value.violation > 0

    def test_inconsistent_equalities(self):
        problem = QpProblem(np.eye(2), np.zeros(2), A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[0.0, 1.0])

        with pytest.raises(InfeasibleError, match="inconsistent"):
            solve(problem)

    def test_iteration_cap(self):
        """Test that exceeding the iteration cap raises DegenerateError."""
        problem = QpProblem([[2.0]], [-4.0], A_in=[[-1.0]], b_in=[-1.0])

        with pytest.raises(DegenerateError) as exc_info:
            solve(problem, max_iterations=1)

        assert exc_info.value.iterations == 1

    def test_infeasible_start_uses_elastic_phase(self):
        """Test a start far outside the feasible set."""
        problem = QpProblem(np.eye(2), np.zeros(2), A_in=[[1.0, 0.0], [0.0, 1.0]], b_in=[1e7, 3.0])
        solution = solve(problem)

        np.testing.assert_allclose(solution.x, [1e7, 3.0])
        assert solution.active_set == (0, 1)

    @pytest.mark.parametrize("factor", [0.5, 2.0, 1000.0])
    def test_scaled_objective_keeps_minimizer(self, factor):
        """Test that scaling the objective scales both multiplier sets and nothing else."""
        problem = random_problem(np.random.default_rng(3))
        base = solve(problem)
        scaled = solve(problem.scaled(factor))

        np.testing.assert_allclose(scaled.x, base.x, atol=1e-9)
        np.testing.assert_allclose(scaled.u, factor * base.u, rtol=1e-7, atol=1e-8 * factor)
        np.testing.assert_allclose(scaled.w, factor * base.w, rtol=1e-7, atol=1e-8 * factor)

    def test_pinned_bounds(self):
        """Test min (x - 2)^2 with 1 <= x <= 1."""
        problem = QpProblem([[2.0]], [-4.0], A_in=[[1.0], [-1.0]], b_in=[1.0, -1.0])
        solution = solve(problem)

        assert solution.x == pytest.approx([1.0])
        assert len(solution.active_set) == 1
        assert solution.u[0] - solution.u[1] == pytest.approx(-2.0)
        assert np.all(solution.u >= 0.0)

    def test_repeated_rows_match_enumeration(self):
        """Test pinned pairs and duplicated rows against the enumeration solver."""
        rng = np.random.default_rng(77)
        for _ in range(100):
            problem = problem_with_repeated_rows(rng)
            solution = solve(problem)
            reference = enumerate_active_sets(problem)

            scale = 1.0 + abs(reference.objective)
            assert solution.objective == pytest.approx(reference.objective, abs=1e-8 * scale)
            np.testing.assert_allclose(solution.x, reference.x, atol=1e-6)
            assert problem.is_feasible(solution.x)
            assert np.all(solution.u >= 0.0)

    def test_kkt_residuals(self):
        problem = random_problem(np.random.default_rng(11))
        residuals = solve(problem).kkt_residuals(problem)

        assert residuals["primal"] <= 1e-9
        assert residuals["dual"] <= 1e-10
        assert residuals["complementarity"] <= 1e-8
        assert residuals["stationarity"] <= 1e-8


class TestEnumerateActiveSets:
    """Test cases for the enumeration reference solver."""

    def test_single_bound(self):
        problem = QpProblem([[2.0]], [0.0], A_in=[[1.0]], b_in=[1.0])
        solution = enumerate_active_sets(problem)

        assert solution.x == pytest.approx([1.0])
        assert solution.u == pytest.approx([2.0])
        assert solution.active_set == (0,)

    def test_infeasible(self):
        problem = QpProblem([[2.0]], [0.0], A_in=[[1.0], [-1.0]], b_in=[1.0, 0.0])

        with pytest.raises(InfeasibleError):
            enumerate_active_sets(problem)

    @pytest.mark.acceptance
    @pytest.mark.slow
    def test_matches_active_set_solver(self):
        """Test the solver against enumeration on random 5-variable problems."""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            problem = random_problem(rng)
            solution = solve(problem)
            reference = enumerate_active_sets(problem)

            scale = 1.0 + abs(reference.objective)
            assert solution.objective == pytest.approx(reference.objective, abs=1e-8 * scale)
            np.testing.assert_allclose(solution.x, reference.x, atol=1e-6)

            residuals = solution.kkt_residuals(problem)
            assert residuals["primal"] <= 1e-9 * max(1.0, np.max(np.abs(problem.b_in)))
            assert residuals["dual"] <= 1e-10
            assert residuals["complementarity"] <= 1e-8 * scale
            assert residuals["stationarity"] <= 1e-8 * scale
