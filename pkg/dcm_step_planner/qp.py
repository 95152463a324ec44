"""
Dense convex QP solver for the small problems built by the step sequencer.

Solves  min 1/2 x'Hx + g'x  s.t.  A_in x >= b_in,  A_eq x = b_eq
with a primal active-set method. Dropping constraints follows a lowest-index
rule so the iteration cannot cycle. A brute-force active-set enumeration is
provided as a reference solver for tests.

Multiplier convention: grad f - A_in' u + A_eq' w = 0 with u >= 0.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
DUAL_TOL = 1e-10
DIRECTION_TOL = 1e-12
SYMMETRY_TOL = 1e-12
KKT_CONDITION_LIMIT = 1e14
DEFAULT_MAX_ITERATIONS = 200
ELASTIC_RETRIES = 3


class QpError(Exception):
    """Base exception for QP solver failures."""
    pass


class InfeasibleError(QpError):
    """Raised when the constraint set admits no point."""

    def __init__(self, message: str, violation: float = float("nan")):
        self.violation = violation
        super().__init__(message)


class DegenerateError(QpError):
    """Raised when the active-set iteration fails to terminate."""

    def __init__(self, message: str, iterations: int = 0):
        self.iterations = iterations
        super().__init__(message)


class SingularKktError(QpError):
    """Raised when an equality-constrained KKT matrix is singular."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        self.condition_number = condition_number
        super().__init__(message)


def _as_matrix(value: Optional[np.ndarray], n: int) -> np.ndarray:
    if value is None:
        return np.zeros((0, n))
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.size == 0:
        return np.zeros((0, n))
    return matrix


def _as_vector(value: Optional[np.ndarray], m: int) -> np.ndarray:
    if value is None:
        return np.zeros(m)
    return np.asarray(value, dtype=float).reshape(-1)


@dataclass
class QpProblem:
    """
    Convex QP with dense data.
    `offset` is a constant added to the reported objective.
    """
    H: np.ndarray
    g: np.ndarray
    A_in: Optional[np.ndarray] = None
    b_in: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        """Coerce and validate problem data."""
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H must be square, got shape {self.H.shape}")
        self.g = _as_vector(self.g, n)
        if self.g.shape != (n,):
            raise ValueError("g must have one entry per variable")

        self.A_in = _as_matrix(self.A_in, n)
        self.b_in = _as_vector(self.b_in, self.A_in.shape[0])
        self.A_eq = _as_matrix(self.A_eq, n)
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0])
        for name, A, b in (("A_in", self.A_in, self.b_in), ("A_eq", self.A_eq, self.b_eq)):
            if A.shape[1] != n:
                raise ValueError(f"{name} must have {n} columns")
            if b.shape != (A.shape[0],):
                raise ValueError(f"{name} and its right-hand side disagree in length")

        scale = max(1.0, float(np.max(np.abs(self.H)))) if n else 1.0
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > SYMMETRY_TOL * scale:
            raise ValueError("H must be symmetric")
        if self.m_eq > n:
            raise ValueError("more equality constraints than variables")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m_in(self) -> int:
        return self.A_in.shape[0]

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x + self.offset)

    def inequality_values(self, x: np.ndarray) -> np.ndarray:
        return self.A_in @ x - self.b_in

    def equality_values(self, x: np.ndarray) -> np.ndarray:
        return self.A_eq @ x - self.b_eq

    def inequality_tolerances(self) -> np.ndarray:
        return FEASIBILITY_TOL * np.maximum(1.0, np.abs(self.b_in))

    def is_feasible(self, x: np.ndarray) -> bool:
        if np.any(self.inequality_values(x) < -self.inequality_tolerances()):
            return False
        eq_tol = FEASIBILITY_TOL * np.maximum(1.0, np.abs(self.b_eq))
        return bool(np.all(np.abs(self.equality_values(x)) <= eq_tol))

    def scaled(self, factor: float) -> "QpProblem":
        """Same constraints with the objective scaled by a positive factor."""
        if factor <= 0:
            raise ValueError("factor must be positive")
        return QpProblem(self.H * factor, self.g * factor, self.A_in, self.b_in,
                         self.A_eq, self.b_eq, self.offset * factor)


@dataclass
class QpSolution:
    """Primal-dual solution of a QpProblem."""
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    active_set: Tuple[int, ...]
    objective: float
    iterations: int = 0

    def kkt_residuals(self, problem: QpProblem) -> Dict[str, float]:
        """
        Largest violation of each KKT condition at this solution.

        Returns:
            Dict with primal, dual, complementarity and stationarity residuals
        """
        slack = problem.inequality_values(self.x)
        gradient = problem.H @ self.x + problem.g
        stationarity = gradient - problem.A_in.T @ self.u + problem.A_eq.T @ self.w
        primal = max(
            float(np.max(-slack, initial=0.0)),
            float(np.max(np.abs(problem.equality_values(self.x)), initial=0.0)),
        )
        return {
            "primal": primal,
            "dual": float(np.max(-self.u, initial=0.0)),
            "complementarity": float(np.max(np.abs(self.u * slack), initial=0.0)),
            "stationarity": float(np.max(np.abs(stationarity), initial=0.0)),
        }


def solve_equality_kkt(H: np.ndarray, g: np.ndarray, A: Optional[np.ndarray] = None,
                       b: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve the equality-constrained QP  min 1/2 x'Hx + g'x  s.t.  Ax = b.

    Args:
        H: Hessian (n x n)
        g: Linear term (n)
        A: Constraint rows (m x n), may be empty
        b: Right-hand side (m)

    Returns:
        Tuple (x, lam) satisfying Hx + g + A'lam = 0 and Ax = b

    Raises:
        SingularKktError: If the KKT matrix is singular or too ill-conditioned
    """
    n = H.shape[0]
    A = _as_matrix(A, n)
    m = A.shape[0]
    b = _as_vector(b, m)

    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = H
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    rhs = np.concatenate([-g, b])

    try:
        condition = float(np.linalg.cond(kkt))
    except np.linalg.LinAlgError:
        condition = float("inf")
    if not np.isfinite(condition) or condition > KKT_CONDITION_LIMIT:
        raise SingularKktError(f"KKT matrix is singular (cond={condition:.3e})", condition)

    try:
        solution = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularKktError(f"KKT solve failed: {exc}", condition) from exc
    return solution[:n], solution[n:]


def _depends_on(A_w: np.ndarray, rank_w: int, row: np.ndarray) -> bool:
    """True when `row` lies in the span of the rows of A_w."""
    if A_w.shape[0] == 0:
        return False
    return np.linalg.matrix_rank(np.vstack([A_w, row])) == rank_w


def _active_set_iterations(H: np.ndarray, g: np.ndarray, A_in: np.ndarray, b_in: np.ndarray,
                           A_eq: np.ndarray, b_eq: np.ndarray, x0: np.ndarray,
                           max_iterations: int) -> Tuple[np.ndarray, List[int], np.ndarray, int]:
    """
    Primal active-set iterations from a feasible start.

    Returns:
        Tuple (x, working set, multipliers of [equalities; working set], iterations)
    """
    m_eq = A_eq.shape[0]
    x = x0.copy()
    working: List[int] = []

    for iteration in range(1, max_iterations + 1):
        A_w = np.vstack([A_eq, A_in[working]]) if working else A_eq
        b_w = np.concatenate([b_eq, b_in[working]])
        try:
            # Step toward the working-set minimizer; the right-hand side also
            # absorbs any residual left on the working constraints.
            p, lam = solve_equality_kkt(H, H @ x + g, A_w, b_w - A_w @ x)
        except SingularKktError as exc:
            raise DegenerateError(f"working set {working} is degenerate: {exc}", iteration) from exc

        if np.all(np.abs(p) <= 1e-13 * (1.0 + np.abs(x))):
            x = x + p
        else:
            alpha, blocking = 1.0, None
            slack = A_in @ x - b_in
            direction = A_in @ p
            threshold = DIRECTION_TOL * np.linalg.norm(p)
            rank_w = np.linalg.matrix_rank(A_w) if A_w.shape[0] else 0
            for i in range(A_in.shape[0]):
                if i in working:
                    continue
                if direction[i] < -threshold * max(1.0, np.linalg.norm(A_in[i])):
                    if _depends_on(A_w, rank_w, A_in[i]):
                        # Held by the working rows; only residual corrections move it.
                        continue
                    alpha_i = max(0.0, -slack[i] / direction[i])
                    if alpha_i < alpha:
                        alpha, blocking = alpha_i, i
            x = x + alpha * p
            if blocking is not None:
                working.append(blocking)
                working.sort()
                logger.debug(f"Iteration {iteration}: constraint {blocking} blocks at alpha={alpha:.3e}")
                continue

        u_working = -lam[m_eq:]
        scale = max(1.0, float(np.max(np.abs(lam), initial=0.0)))
        negative = [i for i, u_i in zip(working, u_working) if u_i < -DUAL_TOL * scale]
        if not negative:
            return x, working, lam, iteration

        dropped = min(negative)
        working.remove(dropped)
        logger.debug(f"Iteration {iteration}: dropping constraint {dropped}")

    raise DegenerateError(f"active-set method exceeded {max_iterations} iterations", max_iterations)


def _least_norm_equality_point(problem: QpProblem) -> np.ndarray:
    if problem.m_eq == 0:
        return np.zeros(problem.n)
    x, *_ = np.linalg.lstsq(problem.A_eq, problem.b_eq, rcond=None)
    residual = np.abs(problem.equality_values(x))
    if np.any(residual > FEASIBILITY_TOL * np.maximum(1.0, np.abs(problem.b_eq))):
        raise InfeasibleError("equality constraints are inconsistent", float(np.max(residual)))
    return x


def find_feasible_point(problem: QpProblem,
                        max_iterations: int = DEFAULT_MAX_ITERATIONS) -> np.ndarray:
    """
    Phase 1: find a point satisfying all constraints.

    Starts from the least-norm equality solution and, if that violates an
    inequality, solves an elastic problem with a single slack variable
    penalized linearly.

    Raises:
        InfeasibleError: If no feasible point exists
    """
    x_start = _least_norm_equality_point(problem)
    slack = problem.inequality_values(x_start)
    if problem.m_in == 0 or np.all(slack >= -problem.inequality_tolerances()):
        return x_start

    n, m_in = problem.n, problem.m_in
    s0 = float(np.max(-slack))
    logger.debug(f"Start violates inequalities by {s0:.3e}, solving elastic problem")

    H1 = np.eye(n + 1)
    A1_in = np.vstack([
        np.hstack([problem.A_in, np.ones((m_in, 1))]),
        np.eye(1, n + 1, n),
    ])
    b1_in = np.concatenate([problem.b_in, [0.0]])
    A1_eq = np.hstack([problem.A_eq, np.zeros((problem.m_eq, 1))])
    z0 = np.concatenate([x_start, [s0]])

    penalty = 1e3 * (1.0 + s0 + float(np.max(np.abs(x_start))) + float(np.max(np.abs(problem.b_in))))
    elastic = s0
    for attempt in range(ELASTIC_RETRIES + 1):
        g1 = np.concatenate([-x_start, [penalty]])
        z, *_ = _active_set_iterations(H1, g1, A1_in, b1_in, A1_eq, problem.b_eq, z0, max_iterations)
        elastic = float(z[-1])
        if elastic <= FEASIBILITY_TOL * max(1.0, s0):
            x = z[:n]
            if problem.is_feasible(x):
                return x
        penalty *= 1e3
        logger.debug(f"Elastic attempt {attempt} left slack {elastic:.3e}, raising penalty")

    raise InfeasibleError(f"no feasible point (residual slack {elastic:.3e})", elastic)


def solve(problem: QpProblem, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> QpSolution:
    """
    Solve a convex QP with the primal active-set method.

    Args:
        problem: QP data
        max_iterations: Iteration cap for each active-set run

    Returns:
        QpSolution with multipliers in the convention of this module

    Raises:
        InfeasibleError: If the constraints admit no point
        DegenerateError: If the iteration cap is exceeded or a working set is degenerate
    """
    x0 = find_feasible_point(problem, max_iterations)
    x, working, lam, iterations = _active_set_iterations(
        problem.H, problem.g, problem.A_in, problem.b_in,
        problem.A_eq, problem.b_eq, x0, max_iterations,
    )

    u = np.zeros(problem.m_in)
    u[working] = np.maximum(-lam[problem.m_eq:], 0.0)
    w = lam[:problem.m_eq].copy()
    logger.debug(f"QP solved in {iterations} iterations, active set {working}")
    return QpSolution(x=x, u=u, w=w, active_set=tuple(working),
                      objective=problem.objective(x), iterations=iterations)


def enumerate_active_sets(problem: QpProblem) -> QpSolution:
    """
    Reference solver: try every subset of inequalities as the active set.

    Exponential in the number of inequalities; intended for small test problems.

    Raises:
        InfeasibleError: If no subset yields a feasible point
    """
    best: Optional[QpSolution] = None
    tolerances = problem.inequality_tolerances()
    for size in range(problem.m_in + 1):
        for subset in itertools.combinations(range(problem.m_in), size):
            rows = list(subset)
            A_w = np.vstack([problem.A_eq, problem.A_in[rows]])
            b_w = np.concatenate([problem.b_eq, problem.b_in[rows]])
            try:
                x, lam = solve_equality_kkt(problem.H, problem.g, A_w, b_w)
            except SingularKktError:
                continue
            if np.any(problem.inequality_values(x) < -tolerances):
                continue
            objective = problem.objective(x)
            if best is None or objective < best.objective - 1e-12 * (1.0 + abs(best.objective)):
                u = np.zeros(problem.m_in)
                u[rows] = -lam[problem.m_eq:]
                best = QpSolution(x=x, u=u, w=lam[:problem.m_eq].copy(),
                                  active_set=subset, objective=objective)
    if best is None:
        raise InfeasibleError("no active set yields a feasible point")
    return best
