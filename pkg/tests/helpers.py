"""
Closed-form references shared by the planner tests.
"""
import numpy as np

from dcm_step_planner.models import StanceContext, StepSide
from dcm_step_planner.sequencer import nominal_dcm_offset


def zero_residual_context(params, p0=(0.1, -0.05), side=StepSide.NEGATIVE):
    """Context at t = 0 whose measured DCM makes the nominal targets exactly feasible."""
    p0 = np.asarray(p0, dtype=float)
    width = params.lateral_bounds(side).nominal
    gamma_nom = params.gamma(params.T_nom)
    landing = np.array([params.l_nom, width]) + nominal_dcm_offset(params, side)
    return StanceContext(p0, 0.0, p0 + landing / gamma_nom, side)


def reduced_optimum(params, ctx):
    """
    Closed-form optimum of the step QP when no inequality is active.

    Eliminating p and b through the dynamics leaves a scalar problem in Gamma.

    Returns:
        Tuple (p, gamma, b, helper values)
    """
    a1, a2, a3 = params.alpha1, params.alpha2, params.alpha3
    side = ctx.side_next
    decay = np.exp(-params.omega0 * ctx.t)
    r = (ctx.zeta_hat - ctx.p0) * decay
    target = ctx.p0 + np.array([params.l_nom, params.lateral_bounds(side).nominal])
    b_nom = nominal_dcm_offset(params, side)
    gamma_nom = params.gamma(ctx.t_origin + params.T_nom)
    kappa = a1 * a3 / (a1 + a3)
    d = ctx.p0 - target - b_nom
    denominator = a2 + kappa * (r @ r)
    gamma = (a2 * gamma_nom - kappa * (r @ d)) / denominator
    rho = d + r * gamma
    p = target + (a3 / (a1 + a3)) * rho
    b = b_nom + (a1 / (a1 + a3)) * rho
    helpers = {"r": r, "rho": rho, "kappa": kappa, "denominator": denominator,
               "decay": decay, "gamma_nom": gamma_nom}
    return p, gamma, b, helpers
