"""
Closed-loop LIPM walking simulator.

The pendulum is propagated in closed form between events. Every control tick
the next step is replanned from the measured DCM; touchdowns and pushes are
applied exactly at their event times inside the tick.
"""
import asyncio
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import qp
from .horizon import (
    SequencingError, TimingAnchor, generate_sequence, swing_height_reference,
    com_terminal_reference,
)
from .models import (
    LipmState, SequencerParams, StanceContext, Step, StepSequence, StepSide, as_point,
)
from .sequencer import nominal_dcm_offset, solve_step

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    """Raised when a scenario does not fit the sequencer parameters it runs with."""
    pass


class PlanFailedError(Exception):
    """Raised when replanning fails during a run; the robot is considered fallen."""

    def __init__(self, message: str, time: float, result: Optional["SimulationResult"] = None):
        self.time = time
        self.result = result
        super().__init__(message)


@dataclass
class VelocityCommand:
    """Nominal step command that takes effect at `time`."""
    time: float
    l_nom: float
    w_nom: Optional[float] = None
    T_nom: Optional[float] = None

    def apply(self, params: SequencerParams) -> SequencerParams:
        return params.with_command(self.l_nom, self.w_nom, self.T_nom)


@dataclass
class Push:
    """Impulsive push, given either as an impulse (N s) or as a direct DCM shift (m)."""
    time: float
    impulse: Optional[np.ndarray] = None
    delta_zeta: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.impulse is None) == (self.delta_zeta is None):
            raise ValueError("push needs exactly one of impulse or delta_zeta")
        if self.impulse is not None:
            self.impulse = as_point(self.impulse, "impulse")
        if self.delta_zeta is not None:
            self.delta_zeta = as_point(self.delta_zeta, "delta_zeta")


@dataclass
class Slip:
    """Landing displacement added to the planned position of a touchdown."""
    step_index: int
    displacement: np.ndarray

    def __post_init__(self):
        if self.step_index < 0:
            raise ValueError("step_index must be non-negative")
        self.displacement = as_point(self.displacement, "displacement")


@dataclass
class Scenario:
    """Closed-loop run description."""
    duration: float = 10.0
    control_dt: float = 0.01
    commands: List[VelocityCommand] = field(default_factory=list)
    pushes: List[Push] = field(default_factory=list)
    slips: List[Slip] = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0
    mass: Optional[float] = None
    initial_side: StepSide = StepSide.NEGATIVE
    p_start: np.ndarray = field(default_factory=lambda: np.zeros(2))
    swing_height: float = 0.05
    full_horizon: bool = False
    horizon: float = 1.0
    steady_start: Optional[float] = None
    recovery_band: float = 0.02
    name: str = "scenario"

    def __post_init__(self):
        """Validate the scenario."""
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.control_dt <= 0:
            raise ValueError("control_dt must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.mass is not None and self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if not isinstance(self.initial_side, StepSide):
            self.initial_side = StepSide(self.initial_side)
        self.p_start = as_point(self.p_start, "p_start")
        for event in list(self.commands) + list(self.pushes):
            if not 0 <= event.time <= self.duration:
                raise ValueError(f"event time {event.time} outside [0, {self.duration}]")
        for push in self.pushes:
            if push.impulse is not None and self.mass is None:
                raise ValueError("impulse pushes require a mass")
        if self.steady_start is not None and not 0 <= self.steady_start < self.duration:
            raise ValueError("steady_start must lie within [0, duration)")
        self.commands = sorted(self.commands, key=lambda c: c.time)
        self.pushes = sorted(self.pushes, key=lambda p: p.time)

    @property
    def tick_count(self) -> int:
        return int(round(self.duration / self.control_dt))

    def params_at(self, base: SequencerParams, t: float) -> SequencerParams:
        """Parameters carrying the command active at time t."""
        params = base
        for command in self.commands:
            if command.time <= t:
                params = command.apply(base)
        return params

    def check_commands(self, base: SequencerParams):
        """Raise ScenarioError if a command moves a nominal value outside the base bounds."""
        for command in self.commands:
            try:
                command.apply(base)
            except ValueError as e:
                raise ScenarioError(f"command at t={command.time}: {e}") from e

    def slip_for(self, step_index: int) -> np.ndarray:
        total = np.zeros(2)
        for slip in self.slips:
            if slip.step_index == step_index:
                total = total + slip.displacement
        return total

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        """Build a scenario from a config block; raises KeyError on unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"unknown scenario keys: {', '.join(unknown)}")
        values = dict(data)
        values["commands"] = [VelocityCommand(**c) for c in data.get("commands", [])]
        values["pushes"] = [Push(**p) for p in data.get("pushes", [])]
        values["slips"] = [Slip(**s) for s in data.get("slips", [])]
        return cls(**values)


@dataclass
class TraceRow:
    """Closed-loop state and plan at one control tick."""
    t_abs: float
    c: np.ndarray
    c_dot: np.ndarray
    zeta: np.ndarray
    zeta_hat: np.ndarray
    p0: np.ndarray
    support_side: StepSide
    swing_z: float
    planned: Step
    com_reference: Optional[np.ndarray] = None


@dataclass
class SimulationMetrics:
    duration: float
    steps_taken: int
    target_velocity: Tuple[float, float]
    mean_velocity: Tuple[float, float]
    velocity_error: Tuple[float, float]
    recovery_steps: Optional[int] = None
    rise_time: Optional[float] = None
    failed_at: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class SimulationResult:
    scenario: Scenario
    trace: List[TraceRow]
    steps_taken: StepSequence
    metrics: Optional[SimulationMetrics] = None
    final_state: Optional[LipmState] = None


def propagate(state: LipmState, dt: float, omega0: float) -> LipmState:
    """
    Closed-form LIPM propagation over dt with the support fixed.

    Args:
        state: State at the start of the interval
        dt: Interval length (s), non-negative
        omega0: Pendulum natural frequency

    Returns:
        State at the end of the interval
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    grow = math.exp(omega0 * dt)
    decay = math.exp(-omega0 * dt)
    offset = state.zeta - state.p0
    zeta = state.p0 + offset * grow
    c = state.p0 + (state.c - state.p0) * decay + offset * math.sinh(omega0 * dt)
    return replace(state, c=c, c_dot=omega0 * (zeta - c), zeta=zeta, t_abs=state.t_abs + dt)


def apply_push(state: LipmState, impulse: np.ndarray, mass: float, omega0: float) -> LipmState:
    """Instantaneous impulse (N s) on a body of the given mass."""
    if mass <= 0:
        raise ValueError("mass must be positive")
    delta_v = as_point(impulse, "impulse") / mass
    return replace(state, c_dot=state.c_dot + delta_v, zeta=state.zeta + delta_v / omega0)


def apply_dcm_shift(state: LipmState, delta_zeta: np.ndarray, omega0: float) -> LipmState:
    """Instantaneous DCM displacement with the CoM position held."""
    delta = as_point(delta_zeta, "delta_zeta")
    return replace(state, c_dot=state.c_dot + omega0 * delta, zeta=state.zeta + delta)


def touchdown(state: LipmState, step: Step, slip: Optional[np.ndarray] = None) -> LipmState:
    """Switch support to the landed foot; c, c_dot and zeta are continuous."""
    landing = step.p_T if slip is None else step.p_T + as_point(slip, "slip")
    return replace(state, p0=landing.copy(), support_side=step.side, t_contact=state.t_abs)


def nominal_initial_state(params: SequencerParams, p0: np.ndarray,
                          side_next: StepSide, t_abs: float = 0.0) -> LipmState:
    """
    State just after a touchdown on the nominal periodic gait.

    The CoM sits on the DCM, so the CoM velocity is zero at the start.
    """
    p0 = as_point(p0, "p0")
    zeta = p0 + nominal_dcm_offset(params, side_next.opposite)
    return LipmState(c=zeta.copy(), c_dot=np.zeros(2), zeta=zeta, p0=p0,
                     t_abs=t_abs, t_contact=t_abs, support_side=side_next.opposite)


def predict_com_reference(state: LipmState, sequence: StepSequence, horizon: float,
                          omega0: float) -> np.ndarray:
    """
    Terminal CoM reference for a planned sequence.

    Rolls the pendulum through the planned contacts that fall inside the
    horizon, then extrapolates from the last one to the horizon end. Contact
    times of the sequence are on the clock of `state.t_contact`.
    """
    now = state.time_since_contact
    horizon_end = now + horizon
    rolled = state
    last_contact = now
    for step in sequence.steps:
        if step.T > horizon_end:
            break
        rolled = propagate(rolled, step.T - last_contact, omega0)
        rolled = touchdown(rolled, step)
        last_contact = step.T
    return com_terminal_reference(rolled.c, rolled.zeta, last_contact, horizon_end, omega0)


class _RunMonitor:
    """
    Collects touchdowns and turns them into the run metrics.

    Taken steps carry the absolute touchdown time as T, the actual landing
    point as p_T, the actual DCM offset at touchdown as b_T, and the Gamma of
    the stance that ended there.
    """

    def __init__(self, params: SequencerParams, scenario: Scenario, omega0: float):
        self.params = params
        self.scenario = scenario
        self.omega0 = omega0
        self.steps: List[Step] = []

    def record(self, planned: Step, state_before: LipmState, state_after: LipmState) -> None:
        self.steps.append(Step(
            p_T=state_after.p0.copy(),
            gamma=math.exp(self.omega0 * state_before.time_since_contact),
            T=state_after.t_abs,
            b_T=state_after.zeta - state_after.p0,
            side=planned.side,
        ))

    def taken(self) -> StepSequence:
        return StepSequence(steps=list(self.steps), t0=0.0, horizon=self.scenario.duration,
                            zeta_chain=[step.zeta for step in self.steps])

    def _recovery_steps(self) -> Optional[int]:
        if not self.scenario.pushes:
            return None
        last_push = self.scenario.pushes[-1].time
        deviations = []
        for previous, step in zip(self.steps, self.steps[1:]):
            if step.T <= last_push:
                continue
            nominal = self.scenario.params_at(self.params, step.T).lateral_bounds(step.side).nominal
            deviations.append(abs(step.p_T[1] - previous.p_T[1] - nominal))
        settled = None
        for k in range(len(deviations) - 1, -1, -1):
            if deviations[k] > self.scenario.recovery_band:
                break
            settled = k
        return settled

    def _rise_time(self, target: float) -> Optional[float]:
        switches = [c.time for c in self.scenario.commands if c.time > 0]
        if not switches or target == 0:
            return None
        switch = switches[-1]
        for t, velocity in step_velocities(self.steps, after=switch):
            if velocity >= 0.9 * target:
                return t - switch
        return None

    def metrics(self, trace: List[TraceRow], final: LipmState,
                failed_at: Optional[float] = None) -> SimulationMetrics:
        final_params = self.scenario.params_at(self.params, final.t_abs)
        target = (final_params.nominal_velocity, 0.0)
        start = self.scenario.steady_start
        if start is None:
            start = self.scenario.duration / 2.0
        window = [row for row in trace if row.t_abs >= start]
        if window and final.t_abs > window[0].t_abs:
            mean = (final.c - window[0].c) / (final.t_abs - window[0].t_abs)
        else:
            mean = np.zeros(2)
        return SimulationMetrics(
            duration=final.t_abs,
            steps_taken=len(self.steps),
            target_velocity=target,
            mean_velocity=(float(mean[0]), float(mean[1])),
            velocity_error=(abs(float(mean[0]) - target[0]), abs(float(mean[1]) - target[1])),
            recovery_steps=self._recovery_steps(),
            rise_time=self._rise_time(target[0]),
            failed_at=failed_at,
        )


def step_velocities(steps: Sequence[Step], after: float = 0.0) -> List[Tuple[float, float]]:
    """
    Forward DCM velocity over each stance of a run, filtered at step granularity.

    Args:
        steps: Taken steps with absolute touchdown times
        after: Only stances starting at or after this time are reported

    Returns:
        List of (touchdown time ending the stance, mean forward velocity)
    """
    velocities = []
    for previous, step in zip(steps, steps[1:]):
        if previous.T < after:
            continue
        velocities.append((step.T, float((step.zeta[0] - previous.zeta[0]) / (step.T - previous.T))))
    return velocities


def run(params: SequencerParams, scenario: Scenario) -> SimulationResult:
    """
    Simulate a closed-loop walk.

    Args:
        params: Base sequencer parameters; commands in the scenario override
            the nominal step length, width and duration
        scenario: Run description

    Returns:
        SimulationResult with the per-tick trace, the taken steps and metrics

    Raises:
        ScenarioError: If a command does not fit the base parameters
        PlanFailedError: If a replan fails; carries the failure time and the
            result up to that point
    """
    scenario.check_commands(params)
    omega0 = params.omega0
    rng = np.random.default_rng(scenario.seed)
    dt = scenario.control_dt
    state = nominal_initial_state(scenario.params_at(params, 0.0), scenario.p_start,
                                  scenario.initial_side)
    monitor = _RunMonitor(params, scenario, omega0)
    trace: List[TraceRow] = []
    pushes = list(scenario.pushes)
    logger.info(f"Running scenario '{scenario.name}' for {scenario.duration} s "
                f"({scenario.tick_count} ticks)")

    for tick in range(scenario.tick_count):
        t_start = tick * dt
        t_end = (tick + 1) * dt
        state = replace(state, t_abs=t_start)
        tick_params = scenario.params_at(params, t_start)

        noise = rng.normal(0.0, scenario.noise_sigma, size=2) if scenario.noise_sigma > 0 else np.zeros(2)
        zeta_hat = state.zeta + noise
        ctx = StanceContext(state.p0, t_start - state.t_contact, zeta_hat, state.side_next)
        com_reference = None
        try:
            if scenario.full_horizon:
                sequence = generate_sequence(tick_params, ctx, scenario.horizon,
                                             anchor=TimingAnchor.TOUCHDOWN)
                planned = sequence.steps[0]
                com_reference = predict_com_reference(state, sequence, scenario.horizon, omega0)
            else:
                planned = solve_step(tick_params, ctx)
        except (qp.QpError, SequencingError) as e:
            logger.error(f"Replanning failed at t={t_start:.3f}: {e}")
            partial = SimulationResult(scenario, trace, monitor.taken(), final_state=state)
            partial.metrics = monitor.metrics(trace, state, failed_at=t_start)
            raise PlanFailedError(f"replanning failed at t={t_start:.3f}: {e}", t_start, partial) from e

        swing_t = min(max(ctx.t, 0.0), planned.T)
        trace.append(TraceRow(
            t_abs=t_start,
            c=state.c.copy(),
            c_dot=state.c_dot.copy(),
            zeta=state.zeta.copy(),
            zeta_hat=zeta_hat,
            p0=state.p0.copy(),
            support_side=state.support_side,
            swing_z=swing_height_reference(swing_t, planned.T, scenario.swing_height),
            planned=planned,
            com_reference=com_reference,
        ))

        events: List[Tuple[float, int, Any]] = []
        while pushes and pushes[0].time < t_end:
            push = pushes.pop(0)
            events.append((max(push.time, t_start), 0, push))
        touchdown_time = state.t_contact + planned.T
        if touchdown_time <= t_end:
            events.append((max(touchdown_time, t_start), 1, planned))
        events.sort(key=lambda event: (event[0], event[1]))

        for event_time, kind, payload in events:
            state = replace(propagate(state, event_time - state.t_abs, omega0), t_abs=event_time)
            if kind == 0:
                if payload.delta_zeta is not None:
                    state = apply_dcm_shift(state, payload.delta_zeta, omega0)
                else:
                    state = apply_push(state, payload.impulse, scenario.mass, omega0)
                logger.info(f"Push applied at t={event_time:.3f}")
            else:
                before = state
                state = touchdown(state, payload, scenario.slip_for(len(monitor.steps)))
                monitor.record(payload, before, state)
                logger.debug(f"Touchdown {len(monitor.steps)} at t={event_time:.4f}, "
                             f"p={state.p0.tolist()}")

        state = replace(propagate(state, t_end - state.t_abs, omega0), t_abs=t_end)

    result = SimulationResult(scenario, trace, monitor.taken(), final_state=state)
    result.metrics = monitor.metrics(trace, state)
    logger.info(f"Scenario '{scenario.name}' finished: {len(monitor.steps)} steps, "
                f"mean velocity {result.metrics.mean_velocity}")
    return result


def _run_isolated(params: SequencerParams, scenario: Scenario) -> SimulationResult:
    try:
        return run(params, scenario)
    except PlanFailedError as e:
        logger.error(f"Scenario '{scenario.name}' fell at t={e.time:.3f}")
        return e.result


async def run_sweep(params: SequencerParams, scenarios: Sequence[Scenario],
                    max_concurrency: int = 4) -> List[SimulationResult]:
    """
    Run independent scenarios concurrently.

    Each run owns its RNG through its scenario seed. Results are returned in
    input order; a run that falls returns its partial result with
    `metrics.failed_at` set.
    """
    if max_concurrency < 1:
        raise ValueError("max_concurrency must be at least 1")
    semaphore = asyncio.Semaphore(max_concurrency)

    async def _one(scenario: Scenario) -> SimulationResult:
        async with semaphore:
            return await asyncio.to_thread(_run_isolated, params, scenario)

    return list(await asyncio.gather(*(_one(scenario) for scenario in scenarios)))
