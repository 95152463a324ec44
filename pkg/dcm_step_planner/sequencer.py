"""
Single-step DCM footstep sequencer.

Builds the 5-variable QP over x = (p_Tx, p_Ty, Gamma, b_Tx, b_Ty) that trades
step location, step timing and DCM offset against their nominal values while
keeping the DCM dynamics satisfied at the contact instant.
"""
import logging
import math
from typing import Tuple

import numpy as np

from . import qp
from .models import SequencerParams, StanceContext, Step, StepSide

logger = logging.getLogger(__name__)

N_VARIABLES = 5
N_INEQUALITIES = 6
N_EQUALITIES = 2

INEQUALITY_LABELS = (
    "length_min", "length_max", "width_min", "width_max", "gamma_min", "gamma_max",
)


class InvalidBoundsError(qp.QpError):
    """Raised when the timing window for a step is empty."""

    def __init__(self, message: str, gamma_min: float, gamma_max: float):
        self.gamma_min = gamma_min
        self.gamma_max = gamma_max
        super().__init__(message)


def nominal_dcm_offset(params: SequencerParams, side: StepSide) -> np.ndarray:
    """
    DCM offset at landing on the nominal periodic gait.

    For a step in direction `side`, the offset is the fixed point of
    b' = e^(omega0 T_nom) b - (l_nom, w) over one left/right period, where the
    step following the landing uses the opposite side's nominal width.

    Args:
        params: Sequencer parameters
        side: Bound set of the step whose landing offset is wanted

    Returns:
        Nominal offset (b_x, b_y)
    """
    e = params.gamma(params.T_nom)
    w_side = params.lateral_bounds(side).nominal
    w_following = params.lateral_bounds(side.opposite).nominal
    return np.array([
        params.l_nom / (e - 1.0),
        (e * w_following + w_side) / (e * e - 1.0),
    ])


def timing_bounds(params: SequencerParams, ctx: StanceContext) -> Tuple[float, float, float]:
    """
    Gamma window and nominal Gamma for the context.

    The lower bound never precedes the measurement instant `ctx.t`.

    Returns:
        Tuple (gamma_min, gamma_nom, gamma_max)

    Raises:
        InvalidBoundsError: If the window is empty
    """
    gamma_min = params.gamma(max(ctx.t_origin + params.T_min, ctx.t))
    gamma_max = params.gamma(ctx.t_origin + params.T_max)
    gamma_nom = params.gamma(ctx.t_origin + params.T_nom)
    if gamma_min > gamma_max:
        raise InvalidBoundsError(
            f"empty timing window at t={ctx.t:.4f} (origin {ctx.t_origin:.4f}): "
            f"Gamma_min={gamma_min:.6g} > Gamma_max={gamma_max:.6g}",
            gamma_min, gamma_max,
        )
    return gamma_min, gamma_nom, gamma_max


def dcm_residual_rate(params: SequencerParams, ctx: StanceContext) -> np.ndarray:
    """Coefficient r = (zeta_hat - p0) e^(-omega0 t) multiplying Gamma in the dynamics."""
    return (ctx.zeta_hat - ctx.p0) * math.exp(-params.omega0 * ctx.t)


def build_problem(params: SequencerParams, ctx: StanceContext) -> qp.QpProblem:
    """
    Build the step QP for one stance.

    Inequalities are written as a_i x - b_i >= 0 in the order
    INEQUALITY_LABELS; equalities are the x and y DCM dynamics rows.
    """
    side = ctx.side_next
    lateral = params.lateral_bounds(side)
    gamma_min, gamma_nom, gamma_max = timing_bounds(params, ctx)
    b_nom = nominal_dcm_offset(params, side)
    r = dcm_residual_rate(params, ctx)
    p0x, p0y = ctx.p0

    weights = np.array([params.alpha1, params.alpha1, params.alpha2, params.alpha3, params.alpha3])
    reference = np.array([
        p0x + params.l_nom, p0y + lateral.nominal, gamma_nom, b_nom[0], b_nom[1],
    ])

    A_in = np.array([
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 0.0, 0.0],
    ])
    b_in = np.array([
        p0x + params.l_min,
        -(p0x + params.l_max),
        p0y + lateral.minimum,
        -(p0y + lateral.maximum),
        gamma_min,
        -gamma_max,
    ])
    A_eq = np.array([
        [1.0, 0.0, -r[0], 1.0, 0.0],
        [0.0, 1.0, -r[1], 0.0, 1.0],
    ])

    return qp.QpProblem(
        H=np.diag(2.0 * weights),
        g=-2.0 * weights * reference,
        A_in=A_in,
        b_in=b_in,
        A_eq=A_eq,
        b_eq=ctx.p0.copy(),
        offset=float(np.sum(weights * reference ** 2)),
    )


def solve_problem(params: SequencerParams, ctx: StanceContext) -> Tuple[qp.QpProblem, qp.QpSolution]:
    """Build and solve the step QP, returning both problem and solution."""
    problem = build_problem(params, ctx)
    solution = qp.solve(problem)
    if solution.active_set:
        active = ", ".join(INEQUALITY_LABELS[i] for i in solution.active_set)
        logger.debug(f"Step {ctx.side_next.value} at t={ctx.t:.4f}: active constraints {active}")
    return problem, solution


def solve_step(params: SequencerParams, ctx: StanceContext) -> Step:
    """
    Plan the next footstep for a measured stance.

    Args:
        params: Sequencer parameters
        ctx: Stance context with the measured DCM

    Returns:
        Planned step

    Raises:
        InvalidBoundsError: If the timing window is empty
        QpError: If the QP cannot be solved
    """
    _, solution = solve_problem(params, ctx)
    return Step.from_decision(solution.x, params.omega0, ctx.side_next)


def residuals(params: SequencerParams, ctx: StanceContext, step: Step) -> Tuple[np.ndarray, np.ndarray]:
    """
    Constraint values of a step in its context.

    Returns:
        Tuple (inequality slacks g >= 0, DCM dynamics residuals h == 0)
    """
    problem = build_problem(params, ctx)
    x = step.decision_vector()
    return problem.inequality_values(x), problem.equality_values(x)
