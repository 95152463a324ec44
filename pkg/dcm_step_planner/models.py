"""
Data models for the DCM step planner.
Defines the sequencer parameters, stance context, planned steps and LIPM state.
"""
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import List, Dict, Any, NamedTuple, Optional

import numpy as np

GRAVITY = 9.81


class StepSide(Enum):
    """Lateral bound set of a step, labeled by the direction of the step."""
    NEGATIVE = "negative"  # -y
    POSITIVE = "positive"  # +y

    @property
    def opposite(self) -> "StepSide":
        return StepSide.POSITIVE if self is StepSide.NEGATIVE else StepSide.NEGATIVE


class LateralBounds(NamedTuple):
    minimum: float
    nominal: float
    maximum: float


def as_point(value: Any, name: str = "value") -> np.ndarray:
    """Coerce a 2-vector to a float array, rejecting anything else."""
    point = np.asarray(value, dtype=float).reshape(-1)
    if point.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector, got shape {point.shape}")
    return point


@dataclass
class SequencerParams:
    """
    Step sequencer parameters.
    Defaults are the reference walking parameters for a 0.31 m CoM height.
    """
    alpha1: float = 1e3
    alpha2: float = 1.0
    alpha3: float = 1e6
    z_c: float = 0.31
    gravity: float = GRAVITY
    l_nom: float = 0.1
    l_min: float = -0.3
    l_max: float = 0.3
    w_nom_neg: float = -0.25
    w_min_neg: float = -0.40
    w_max_neg: float = -0.10
    w_nom_pos: float = 0.25
    w_min_pos: float = 0.10
    w_max_pos: float = 0.40
    T_nom: float = 0.3
    T_min: float = 0.1
    T_max: float = 1.0

    def __post_init__(self):
        """Validate parameters."""
        for name in ("alpha1", "alpha2", "alpha3"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.z_c <= 0:
            raise ValueError("z_c must be positive")
        if self.gravity <= 0:
            raise ValueError("gravity must be positive")
        if not self.l_min <= self.l_nom <= self.l_max:
            raise ValueError("l_nom must lie within [l_min, l_max]")
        if not self.w_min_neg <= self.w_nom_neg <= self.w_max_neg:
            raise ValueError("w_nom_neg must lie within [w_min_neg, w_max_neg]")
        if not self.w_min_pos <= self.w_nom_pos <= self.w_max_pos:
            raise ValueError("w_nom_pos must lie within [w_min_pos, w_max_pos]")
        if self.T_min <= 0:
            raise ValueError("T_min must be positive")
        if not self.T_min <= self.T_nom <= self.T_max:
            raise ValueError("T_nom must lie within [T_min, T_max]")

    @property
    def omega0(self) -> float:
        """Natural frequency of the pendulum, sqrt(g / z_c)."""
        return math.sqrt(self.gravity / self.z_c)

    def gamma(self, duration: float) -> float:
        """Exponential timing variable e^(omega0 * duration)."""
        return math.exp(self.omega0 * duration)

    @property
    def nominal_velocity(self) -> float:
        return self.l_nom / self.T_nom

    def lateral_bounds(self, side: StepSide) -> LateralBounds:
        if side is StepSide.NEGATIVE:
            return LateralBounds(self.w_min_neg, self.w_nom_neg, self.w_max_neg)
        return LateralBounds(self.w_min_pos, self.w_nom_pos, self.w_max_pos)

    def with_command(self, l_nom: float, w_nom: Optional[float] = None,
                     T_nom: Optional[float] = None) -> "SequencerParams":
        """
        Return a copy carrying a new velocity command.

        Args:
            l_nom: Nominal step length (m)
            w_nom: Nominal step width magnitude (m); both signed widths are set from it
            T_nom: Nominal step duration (s)
        """
        changes: Dict[str, float] = {"l_nom": l_nom}
        if w_nom is not None:
            changes["w_nom_neg"] = -abs(w_nom)
            changes["w_nom_pos"] = abs(w_nom)
        if T_nom is not None:
            changes["T_nom"] = T_nom
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SequencerParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown sequencer keys: {', '.join(unknown)}")
        return cls(**{key: float(value) for key, value in data.items()})

    def to_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class StanceContext:
    """
    Measured stance the next step is planned from.

    `t` is the instant at which `zeta_hat` is valid, on the clock whose zero is
    the last touchdown (the absolute contact time T_k in the loopback form).
    `t_origin` is the instant the timing window and nominal duration are
    counted from: 0 for the single-step form, T_k for the loopback form.
    """
    p0: np.ndarray
    t: float
    zeta_hat: np.ndarray
    side_next: StepSide
    t_origin: float = 0.0

    def __post_init__(self):
        self.p0 = as_point(self.p0, "p0")
        self.zeta_hat = as_point(self.zeta_hat, "zeta_hat")
        self.t = float(self.t)
        self.t_origin = float(self.t_origin)
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if not isinstance(self.side_next, StepSide):
            self.side_next = StepSide(self.side_next)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "p0": self.p0.tolist(),
            "t": self.t,
            "zeta_hat": self.zeta_hat.tolist(),
            "side_next": self.side_next.value,
            "t_origin": self.t_origin,
        }


@dataclass
class Step:
    """One planned footstep: decision vector (p_T, Gamma(T), b_T) plus its side."""
    p_T: np.ndarray
    gamma: float
    T: float
    b_T: np.ndarray
    side: StepSide

    @classmethod
    def from_decision(cls, x: np.ndarray, omega0: float, side: StepSide) -> "Step":
        """
        Build a step from a QP decision vector.

        Args:
            x: Decision vector (p_Tx, p_Ty, Gamma, b_Tx, b_Ty)
            omega0: Pendulum natural frequency
            side: Bound set the step was planned with

        Returns:
            Step with the contact time recovered from Gamma
        """
        gamma = float(x[2])
        if gamma <= 0:
            raise ValueError(f"Gamma must be positive, got {gamma}")
        return cls(
            p_T=np.array(x[0:2], dtype=float),
            gamma=gamma,
            T=math.log(gamma) / omega0,
            b_T=np.array(x[3:5], dtype=float),
            side=side,
        )

    @property
    def zeta(self) -> np.ndarray:
        """DCM at the contact instant."""
        return self.p_T + self.b_T

    def decision_vector(self) -> np.ndarray:
        return np.array([self.p_T[0], self.p_T[1], self.gamma, self.b_T[0], self.b_T[1]])


@dataclass
class StepSequence:
    """Ordered steps produced by the fixed-horizon sequencer."""
    steps: List[Step]
    t0: float
    horizon: float
    zeta_chain: List[np.ndarray] = field(default_factory=list)
    contexts: List[StanceContext] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def contact_times(self) -> List[float]:
        return [step.T for step in self.steps]

    def mean_velocity(self) -> float:
        """Mean forward velocity between the first and the last contact."""
        if len(self.steps) < 2:
            return 0.0
        first, last = self.steps[0], self.steps[-1]
        return float((last.p_T[0] - first.p_T[0]) / (last.T - first.T))

    def to_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for k, step in enumerate(self.steps):
            rows.append({
                "k": k,
                "side": step.side,
                "p_x": step.p_T[0],
                "p_y": step.p_T[1],
                "T": step.T,
                "gamma": step.gamma,
                "b_x": step.b_T[0],
                "b_y": step.b_T[1],
            })
        return rows


@dataclass(eq=False)
class LipmState:
    """
    Linear inverted pendulum state.
    `support_side` is the bound set of the step that placed the support foot;
    the next step uses the opposite set.
    """
    c: np.ndarray
    c_dot: np.ndarray
    zeta: np.ndarray
    p0: np.ndarray
    t_abs: float
    t_contact: float
    support_side: StepSide

    def __post_init__(self):
        self.c = as_point(self.c, "c")
        self.c_dot = as_point(self.c_dot, "c_dot")
        self.zeta = as_point(self.zeta, "zeta")
        self.p0 = as_point(self.p0, "p0")

    @property
    def side_next(self) -> StepSide:
        return self.support_side.opposite

    @property
    def time_since_contact(self) -> float:
        return self.t_abs - self.t_contact

    def dcm_identity_error(self, omega0: float) -> float:
        """Max deviation from zeta = c + c_dot / omega0."""
        return float(np.max(np.abs(self.zeta - (self.c + self.c_dot / omega0))))
