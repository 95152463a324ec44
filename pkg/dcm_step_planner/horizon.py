"""
Fixed-horizon step sequencing and the references derived from a sequence.
"""
import logging
import math
from enum import Enum

import numpy as np

from . import qp
from .models import SequencerParams, StanceContext, StepSequence, as_point
from .sequencer import solve_step

logger = logging.getLogger(__name__)

MAX_STEPS = 64


class TimingAnchor(Enum):
    """Instant the first step's timing window is counted from."""
    MEASUREMENT = "measurement"
    TOUCHDOWN = "touchdown"


class SequencingError(Exception):
    """Raised when a step of the sequence cannot be planned."""

    def __init__(self, message: str, step_index: int):
        self.step_index = step_index
        super().__init__(message)


class DomainError(ValueError):
    """Raised when a reference is evaluated outside its time domain."""
    pass


def generate_sequence(params: SequencerParams, initial_ctx: StanceContext, horizon: float,
                      anchor: TimingAnchor = TimingAnchor.MEASUREMENT,
                      max_steps: int = MAX_STEPS) -> StepSequence:
    """
    Chain single-step solves until a contact reaches t0 + horizon.

    Each solved step becomes the stance of the next one: its landing point is
    the new support, its contact time the new clock origin and p_T + b_T the
    new measured DCM.

    Args:
        params: Sequencer parameters
        initial_ctx: Measured stance at t0 = initial_ctx.t
        horizon: Prediction horizon H_u (s)
        anchor: Origin of the first step's timing window
        max_steps: Cap on the number of steps

    Returns:
        StepSequence whose last contact time is at or beyond t0 + horizon

    Raises:
        SequencingError: If a step fails to solve or the step cap is hit
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")

    t0 = initial_ctx.t
    t_origin = t0 if anchor is TimingAnchor.MEASUREMENT else initial_ctx.t_origin
    ctx = StanceContext(initial_ctx.p0, t0, initial_ctx.zeta_hat, initial_ctx.side_next, t_origin)
    sequence = StepSequence(steps=[], t0=t0, horizon=horizon)

    while True:
        index = len(sequence.steps)
        if index >= max_steps:
            raise SequencingError(f"horizon {horizon} s not covered within {max_steps} steps", index)
        try:
            step = solve_step(params, ctx)
        except qp.QpError as e:
            raise SequencingError(f"step {index} failed: {e}", index) from e

        sequence.steps.append(step)
        sequence.contexts.append(ctx)
        sequence.zeta_chain.append(step.zeta)
        if step.T >= t0 + horizon:
            break
        ctx = StanceContext(step.p_T, step.T, step.zeta, step.side.opposite, t_origin=step.T)

    logger.debug(f"Generated {len(sequence)} steps over {horizon} s from t0={t0:.4f}")
    return sequence


def swing_height_reference(t: float, t_f: float, height: float) -> float:
    """
    Swing foot height: a quartic that is zero at lift-off and touchdown and
    peaks at `height` mid-swing.

    Raises:
        DomainError: If t_f is not positive or t lies outside [0, t_f]
    """
    if t_f <= 0:
        raise DomainError(f"swing duration must be positive, got {t_f}")
    if t < 0 or t > t_f:
        raise DomainError(f"t={t} outside swing interval [0, {t_f}]")
    return (16.0 * height / t_f ** 4) * t ** 4 - (32.0 * height / t_f ** 3) * t ** 3 \
        + (16.0 * height / t_f ** 2) * t ** 2


def com_terminal_reference(c_hat: np.ndarray, zeta_hat: np.ndarray, contact_time: float,
                           horizon_end: float, omega0: float) -> np.ndarray:
    """
    CoM position at the end of the horizon, rolling the LIPM forward from the
    last contact inside the horizon with the DCM as the pivot.

    Args:
        c_hat: CoM at the last contact
        zeta_hat: DCM at the last contact
        contact_time: Time of the last contact
        horizon_end: End of the horizon, on the same clock
        omega0: Pendulum natural frequency
    """
    c_hat = as_point(c_hat, "c_hat")
    zeta_hat = as_point(zeta_hat, "zeta_hat")
    return (c_hat - zeta_hat) * math.exp(omega0 * (contact_time - horizon_end)) + zeta_hat
