"""
Sensitivity of the step QP solution to DCM measurement errors.

The measured DCM is modelled as zeta_hat = zeta + theta. Differentiating the
KKT system of the step QP with respect to theta (implicit function theorem)
gives d(x*, u*, w*)/d theta = -J_state^-1 J_theta. A central finite-difference
re-solve provides the reference the analytic result is checked against.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from . import qp
from .models import SequencerParams, StanceContext
from .sequencer import (
    INEQUALITY_LABELS, N_EQUALITIES, N_INEQUALITIES, N_VARIABLES, solve_problem,
)

logger = logging.getLogger(__name__)

ACTIVITY_TOL = 1e-8
JACOBIAN_CONDITION_LIMIT = 1e14
DEFAULT_FD_STEP = 1e-5
N_ROWS = N_VARIABLES + N_INEQUALITIES + N_EQUALITIES

ROW_LABELS = (
    ("p_Tx", "p_Ty", "gamma", "b_Tx", "b_Ty")
    + tuple(f"u_{label}" for label in INEQUALITY_LABELS)
    + ("w_x", "w_y")
)


class SensitivityError(Exception):
    """Base exception for sensitivity failures."""
    pass


class SingularJacobianError(SensitivityError):
    """Raised when LICQ or second-order sufficiency fails at the KKT point."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        self.condition_number = condition_number
        super().__init__(message)


class WeakActivityError(SensitivityError):
    """Raised when an inequality is active with a zero multiplier."""

    def __init__(self, message: str, indices: Sequence[int]):
        self.indices = tuple(indices)
        super().__init__(message)


@dataclass
class PerturbedEquality:
    """
    DCM dynamics rows split into h_j(x; zeta) and the theta coefficients c_j(x).

    With zeta = zeta_hat - theta, h(x, theta) + theta * c(x) equals the
    measured-DCM constraint for every theta.
    """
    params: SequencerParams
    context: StanceContext

    @property
    def decay(self) -> float:
        """e^(-omega0 t) at the measurement instant."""
        return math.exp(-self.params.omega0 * self.context.t)

    def h(self, x: np.ndarray, theta: Optional[np.ndarray] = None) -> np.ndarray:
        theta = np.zeros(2) if theta is None else np.asarray(theta, dtype=float)
        zeta = self.context.zeta_hat - theta
        return x[0:2] + x[3:5] - self.context.p0 - (zeta - self.context.p0) * self.decay * x[2]

    def c(self, x: np.ndarray) -> np.ndarray:
        return np.full(N_EQUALITIES, -self.decay * x[2])

    def perturbed(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return self.h(x, theta) + np.asarray(theta, dtype=float) * self.c(x)

    def grad_h(self, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """Rows are the gradients of h_1, h_2 with respect to x."""
        theta = np.zeros(2) if theta is None else np.asarray(theta, dtype=float)
        r = (self.context.zeta_hat - theta - self.context.p0) * self.decay
        return np.array([
            [1.0, 0.0, -r[0], 1.0, 0.0],
            [0.0, 1.0, -r[1], 0.0, 1.0],
        ])

    def grad_c(self) -> np.ndarray:
        grad = np.zeros((N_EQUALITIES, N_VARIABLES))
        grad[:, 2] = -self.decay
        return grad


def perturbed_equality_terms(params: SequencerParams, ctx: StanceContext) -> PerturbedEquality:
    return PerturbedEquality(params, ctx)


@dataclass
class KktPoint:
    """Primal-dual optimum of a step QP together with where it was computed."""
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    params: SequencerParams
    context: StanceContext
    problem: qp.QpProblem

    @classmethod
    def from_solution(cls, params: SequencerParams, ctx: StanceContext,
                      problem: qp.QpProblem, solution: qp.QpSolution) -> "KktPoint":
        return cls(solution.x.copy(), solution.u.copy(), solution.w.copy(), params, ctx, problem)

    @property
    def slacks(self) -> np.ndarray:
        return self.problem.inequality_values(self.x)

    def active_indices(self) -> List[int]:
        return [i for i, g_i in enumerate(self.slacks) if g_i <= ACTIVITY_TOL * max(1.0, abs(self.problem.b_in[i]))]

    def weakly_active_indices(self) -> List[int]:
        return [i for i in self.active_indices() if self.u[i] <= ACTIVITY_TOL]


@dataclass
class SensitivityResult:
    """d(x*, u*, w*)/d theta, rows ordered as ROW_LABELS."""
    d_full: np.ndarray
    kkt_condition_number: float
    active_set: Tuple[int, ...]
    point: KktPoint

    @property
    def d_primal(self) -> np.ndarray:
        return self.d_full[:N_VARIABLES]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": list(ROW_LABELS),
            "columns": ["theta_x", "theta_y"],
            "d_full": self.d_full.tolist(),
            "d_primal": self.d_primal.tolist(),
            "kkt_condition_number": self.kkt_condition_number,
            "active_set": [INEQUALITY_LABELS[i] for i in self.active_set],
            "solution": self.point.x.tolist(),
            "context": self.point.context.to_dict(),
        }


def assemble_kkt_jacobians(point: KktPoint) -> Tuple[np.ndarray, np.ndarray]:
    """
    Jacobians of the KKT system with respect to (x, u, w) and theta.

    Args:
        point: KKT point of the step QP

    Returns:
        Tuple (J_state 13x13, J_theta 13x2)

    Raises:
        WeakActivityError: If strict complementarity fails
        SingularJacobianError: If active gradients are dependent or the
            Hessian is not positive definite on their null space
    """
    weak = point.weakly_active_indices()
    if weak:
        labels = ", ".join(INEQUALITY_LABELS[i] for i in weak)
        raise WeakActivityError(f"weakly active constraints: {labels}", weak)

    equality = perturbed_equality_terms(point.params, point.context)
    G = point.problem.A_in.T
    H_eq = equality.grad_h().T
    C = equality.grad_c().T
    hessian = point.problem.H
    slacks = point.slacks

    active = point.active_indices()
    gradients = np.hstack([G[:, active], H_eq])
    if np.linalg.matrix_rank(gradients) < gradients.shape[1]:
        condition = float(np.linalg.cond(gradients))
        raise SingularJacobianError("active constraint gradients are linearly dependent", condition)
    basis = null_space(gradients.T)
    if basis.size:
        curvature = np.linalg.eigvalsh(basis.T @ hessian @ basis)
        if curvature.min() <= 0:
            raise SingularJacobianError(
                f"second-order sufficiency fails (min curvature {curvature.min():.3e})",
                float(curvature.max() / max(abs(curvature.min()), np.finfo(float).tiny)),
            )

    n, m = N_VARIABLES, N_INEQUALITIES
    J_state = np.zeros((N_ROWS, N_ROWS))
    J_state[:n, :n] = hessian
    J_state[:n, n:n + m] = -G
    J_state[:n, n + m:] = H_eq
    J_state[n:n + m, :n] = np.diag(point.u) @ G.T
    J_state[n:n + m, n:n + m] = np.diag(slacks)
    J_state[n + m:, :n] = H_eq.T

    J_theta = np.zeros((N_ROWS, N_EQUALITIES))
    J_theta[:n] = C @ np.diag(point.w)
    J_theta[n + m:] = np.diag(equality.c(point.x))
    return J_state, J_theta


def dcm_sensitivity(params: SequencerParams, ctx: StanceContext) -> SensitivityResult:
    """
    Analytic sensitivity of the step QP solution to the DCM measurement error.

    Rows of inactive inequalities are zero by construction; the remaining
    reduced KKT system is solved directly.
    """
    problem, solution = solve_problem(params, ctx)
    point = KktPoint.from_solution(params, ctx, problem, solution)
    J_state, J_theta = assemble_kkt_jacobians(point)

    active = point.active_indices()
    keep = (list(range(N_VARIABLES))
            + [N_VARIABLES + i for i in active]
            + list(range(N_VARIABLES + N_INEQUALITIES, N_ROWS)))
    reduced = J_state[np.ix_(keep, keep)]
    condition = float(np.linalg.cond(reduced))
    if not np.isfinite(condition) or condition > JACOBIAN_CONDITION_LIMIT:
        raise SingularJacobianError(f"KKT Jacobian is singular (cond={condition:.3e})", condition)

    d_full = np.zeros((N_ROWS, N_EQUALITIES))
    d_full[keep] = -np.linalg.solve(reduced, J_theta[keep])
    logger.debug(f"Sensitivity at t={ctx.t:.4f}: active {active}, cond {condition:.3e}")
    return SensitivityResult(d_full=d_full, kkt_condition_number=condition,
                             active_set=tuple(active), point=point)


@dataclass
class FiniteDifferenceResult:
    d_primal: np.ndarray
    active_set_stable: bool


def finite_difference_sensitivity(params: SequencerParams, ctx: StanceContext,
                                  step: float = DEFAULT_FD_STEP) -> FiniteDifferenceResult:
    """
    Central-difference sensitivity from re-solving perturbed QPs.

    Args:
        params: Sequencer parameters
        ctx: Nominal context
        step: Perturbation of the measured DCM per axis (m)

    Returns:
        Primal sensitivity and whether every stencil point kept the nominal active set
    """
    _, nominal = solve_problem(params, ctx)
    d_primal = np.zeros((N_VARIABLES, N_EQUALITIES))
    stable = True
    for axis in range(N_EQUALITIES):
        offset = np.zeros(2)
        offset[axis] = step
        _, plus = solve_problem(params, replace(ctx, zeta_hat=ctx.zeta_hat + offset))
        _, minus = solve_problem(params, replace(ctx, zeta_hat=ctx.zeta_hat - offset))
        d_primal[:, axis] = (plus.x - minus.x) / (2.0 * step)
        stable = stable and plus.active_set == nominal.active_set == minus.active_set
    return FiniteDifferenceResult(d_primal, stable)


def relative_deviation(analytic: np.ndarray, reference: np.ndarray,
                       absolute_floor: float = 1e-7, relative_floor: float = 1e-6) -> float:
    """
    Largest entrywise |a - r| / max(|r|, floor).

    The floor is the larger of `absolute_floor` and `relative_floor` times the
    largest reference entry, so structurally zero entries are compared on the
    scale of the whole matrix.
    """
    reference = np.asarray(reference, dtype=float)
    floor = max(absolute_floor, relative_floor * float(np.max(np.abs(reference), initial=0.0)))
    scale = np.maximum(np.abs(reference), floor)
    return float(np.max(np.abs(analytic - reference) / scale))


def draw_theta_samples(n: int, sigma: float, seed: int, antithetic: bool = True) -> np.ndarray:
    """
    Gaussian DCM perturbations, shape (n, 2).

    With `antithetic`, samples come in +/- pairs so odd moments cancel.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    if not antithetic:
        return rng.normal(0.0, sigma, size=(n, 2))
    half = rng.normal(0.0, sigma, size=((n + 1) // 2, 2))
    return np.vstack([half, -half])[:n]


@dataclass
class SurfaceRow:
    index: int
    theta: np.ndarray
    x: Optional[np.ndarray]
    active_set: Tuple[int, ...] = ()
    active_set_changed: bool = False
    infeasible: bool = False


@dataclass
class SolutionSurface:
    """Solutions of the perturbed QP for a set of theta samples."""
    nominal: np.ndarray
    nominal_active_set: Tuple[int, ...]
    rows: List[SurfaceRow] = field(default_factory=list)

    def feasible_rows(self) -> List[SurfaceRow]:
        return [row for row in self.rows if not row.infeasible]

    def active_sets(self) -> set:
        return {row.active_set for row in self.feasible_rows()}


def solution_surface(params: SequencerParams, ctx: StanceContext,
                     theta_samples: np.ndarray) -> SolutionSurface:
    """
    Solve the QP at zeta_hat + theta for each sample.

    Failed solves are marked infeasible on their row instead of raising.
    """
    _, nominal = solve_problem(params, ctx)
    surface = SolutionSurface(nominal=nominal.x.copy(), nominal_active_set=nominal.active_set)
    for index, theta in enumerate(np.asarray(theta_samples, dtype=float).reshape(-1, 2)):
        try:
            _, solution = solve_problem(params, replace(ctx, zeta_hat=ctx.zeta_hat + theta))
        except qp.QpError as e:
            logger.warning(f"Surface sample {index} failed: {e}")
            surface.rows.append(SurfaceRow(index, theta.copy(), None, infeasible=True))
            continue
        surface.rows.append(SurfaceRow(
            index=index,
            theta=theta.copy(),
            x=solution.x.copy(),
            active_set=solution.active_set,
            active_set_changed=solution.active_set != nominal.active_set,
        ))
    return surface


def fit_plane(surface: SolutionSurface, column: int) -> Tuple[float, float, float]:
    """
    Least-squares plane x_column(theta) ~ a + s_x theta_x + s_y theta_y.

    Returns:
        Tuple (a, s_x, s_y)
    """
    rows = surface.feasible_rows()
    if len(rows) < 3:
        raise ValueError("at least three feasible samples are needed for a plane fit")
    design = np.array([[1.0, row.theta[0], row.theta[1]] for row in rows])
    values = np.array([row.x[column] for row in rows])
    coefficients, *_ = np.linalg.lstsq(design, values, rcond=None)
    return float(coefficients[0]), float(coefficients[1]), float(coefficients[2])
