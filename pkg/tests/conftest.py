"""
Shared fixtures for the planner tests.
"""
import numpy as np
import pytest

from dcm_step_planner.models import SequencerParams, StanceContext, StepSide
from dcm_step_planner.sequencer import nominal_dcm_offset


@pytest.fixture
def params():
    """Reference walking parameters."""
    return SequencerParams()


@pytest.fixture
def reference_context():
    """Measured stance of the reference sensitivity study."""
    return StanceContext(
        p0=[-0.12, 0.10],
        t=0.229,
        zeta_hat=[-0.12, -0.07],
        side_next=StepSide.NEGATIVE,
    )


@pytest.fixture
def nominal_context(params):
    """Stance at touchdown on the nominal periodic gait."""
    p0 = np.array([0.0, 0.0])
    side = StepSide.NEGATIVE
    return StanceContext(p0, 0.0, p0 + nominal_dcm_offset(params, side.opposite), side)
