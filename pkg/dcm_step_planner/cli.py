"""
Command-line commands: plan, sensitivity, simulate and sample-config.
Each command reads a Config and writes its data files under the output directory.
"""
import argparse
import asyncio
import json
import logging
from pathlib import Path
from typing import List, Optional

import yaml

from . import output
from .config_manager import Config, ConfigError, ConfigManager, create_sample_config
from .horizon import SequencingError, TimingAnchor, generate_sequence
from .qp import QpError
from .sensitivity import (
    SensitivityError, dcm_sensitivity, draw_theta_samples, finite_difference_sensitivity,
    fit_plane, relative_deviation, solution_surface,
)
from .simulator import PlanFailedError, Scenario, ScenarioError, SimulationResult, run, run_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3
EXIT_FALL = 4
FD_TOLERANCE = 1e-4


class FiniteDifferenceMismatch(SensitivityError):
    """Raised when the analytic sensitivity disagrees with finite differences."""

    def __init__(self, deviation: float):
        self.deviation = deviation
        super().__init__(f"analytic vs finite-difference deviation {deviation:.3e} >= {FD_TOLERANCE}")


def cmd_plan(config: Config) -> List[Path]:
    """Generate a fixed-horizon sequence and write steps.csv and dcm_chain.csv."""
    params = config.sequencer
    ctx = config.plan.context(params)
    sequence = generate_sequence(params, ctx, config.plan.horizon,
                                 anchor=TimingAnchor(config.plan.anchor))
    out_dir = Path(config.output.out_dir)
    precision = config.output.precision

    velocity = sequence.mean_velocity()
    print(f"Planned {len(sequence)} steps over {config.plan.horizon} s, "
          f"mean velocity {velocity:.4f} m/s (commanded {params.nominal_velocity:.4f} m/s)")
    return [
        output.write_steps_csv(out_dir / "steps.csv", sequence, precision, config.foot_name),
        output.write_dcm_chain_csv(out_dir / "dcm_chain.csv", sequence, precision),
    ]


def cmd_sensitivity(config: Config, fd_check: bool = False) -> List[Path]:
    """
    Compute the analytic sensitivity and the sampled solution surface.

    Writes sensitivity.json and surface.csv. With `fd_check`, the analytic
    result is compared with central finite differences and a deviation of
    FD_TOLERANCE or more raises FiniteDifferenceMismatch after writing.
    """
    params = config.sequencer
    settings = config.sensitivity
    ctx = settings.context()
    result = dcm_sensitivity(params, ctx)

    thetas = draw_theta_samples(settings.samples, settings.sigma, config.seed)
    surface = solution_surface(params, ctx, thetas)
    report = result.to_dict()
    report["samples"] = settings.samples
    report["sigma"] = settings.sigma
    report["surface_active_sets"] = sorted(list(s) for s in surface.active_sets())
    if len(surface.feasible_rows()) >= 3:
        report["plane_fit"] = {
            "p_Ty": fit_plane(surface, 1),
            "b_Ty": fit_plane(surface, 4),
        }

    deviation = None
    if fd_check:
        reference = finite_difference_sensitivity(params, ctx, settings.fd_step)
        deviation = relative_deviation(result.d_primal, reference.d_primal)
        report["fd_check"] = {
            "step": settings.fd_step,
            "d_primal": reference.d_primal,
            "max_relative_deviation": deviation,
            "active_set_stable": reference.active_set_stable,
        }
        print(f"Max relative deviation analytic vs finite differences: {deviation:.3e}")

    d = result.d_primal
    print(f"dp_Ty/dtheta_y = {d[1, 1]:.6g}, db_Ty/dtheta_y = {d[4, 1]:.6g}")
    out_dir = Path(config.output.out_dir)
    paths = [
        output.write_json(out_dir / "sensitivity.json", report),
        output.write_surface_csv(out_dir / "surface.csv", surface, config.output.precision),
    ]
    if deviation is not None and deviation >= FD_TOLERANCE:
        raise FiniteDifferenceMismatch(deviation)
    return paths


def _write_simulation(result: SimulationResult, out_dir: Path, config: Config) -> List[Path]:
    precision = config.output.precision
    return [
        output.write_trace_csv(out_dir / "trace.csv", result.trace, precision),
        output.write_steps_csv(out_dir / "steps.csv", result.steps_taken, precision, config.foot_name),
        output.write_json(out_dir / "metrics.json", result.metrics.to_dict()),
    ]


def load_sweep(path: str) -> List[Scenario]:
    """Read a list of scenario blocks, each with a unique `name`."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) if path.endswith((".yaml", ".yml")) else json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read sweep file {path}: {e}") from e
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse sweep file {path}: {e}") from e
    if isinstance(data, dict):
        data = data.get("scenarios", [])
    try:
        scenarios = [Scenario.from_dict(block) for block in data]
    except (TypeError, ValueError, KeyError) as e:
        raise ConfigError(f"invalid sweep file {path}: {e}") from e
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("sweep scenario names must be unique")
    return scenarios


def cmd_simulate(config: Config, sweep_path: Optional[str] = None) -> List[Path]:
    """
    Run the configured scenario, or every scenario of a sweep file concurrently.

    Writes trace.csv, steps.csv and metrics.json per scenario. A fall still
    writes the partial trace before PlanFailedError propagates.
    """
    out_dir = Path(config.output.out_dir)
    if sweep_path:
        scenarios = load_sweep(sweep_path)
        for scenario in scenarios:
            scenario.check_commands(config.sequencer)
        results = asyncio.run(run_sweep(config.sequencer, scenarios))
        paths: List[Path] = []
        failures = []
        for result in results:
            paths.extend(_write_simulation(result, out_dir / result.scenario.name, config))
            if result.metrics.failed_at is not None:
                failures.append(result)
        if failures:
            first = failures[0]
            raise PlanFailedError(f"{len(failures)} scenario(s) fell, first '{first.scenario.name}'",
                                  first.metrics.failed_at, first)
        return paths

    try:
        result = run(config.sequencer, config.scenario)
    except PlanFailedError as e:
        if e.result is not None:
            _write_simulation(e.result, out_dir, config)
        raise
    metrics = result.metrics
    print(f"Simulated {metrics.duration:.2f} s, {metrics.steps_taken} steps, "
          f"mean velocity ({metrics.mean_velocity[0]:.4f}, {metrics.mean_velocity[1]:.4f}) m/s")
    return _write_simulation(result, out_dir, config)


def cmd_sample_config(path: str) -> List[Path]:
    """Write a config file holding every default value."""
    try:
        return [create_sample_config(path)]
    except OSError as e:
        raise ConfigError(f"cannot write sample config {path}: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='DCM footstep planner experiments')
    parser.add_argument('--config', help='JSON or YAML config file')
    parser.add_argument('--out', help='Output directory')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--precision', type=int, help='Significant digits in CSV output')
    parser.add_argument('--log-level', help='Logging level (DEBUG, INFO, ...)')
    parser.add_argument('--log-file', help='Also write the log to this file')

    commands = parser.add_subparsers(dest='command', required=True)
    plan = commands.add_parser('plan', help='Generate a fixed-horizon step sequence')
    plan.add_argument('--horizon', type=float, help='Horizon H_u in seconds')

    sensitivity = commands.add_parser('sensitivity', help='Sensitivity to DCM measurement errors')
    sensitivity.add_argument('--samples', type=int, help='Number of surface samples')
    sensitivity.add_argument('--fd-check', action='store_true',
                             help='Compare with finite differences')

    simulate = commands.add_parser('simulate', help='Closed-loop LIPM simulation')
    simulate.add_argument('--sweep', help='File with a list of scenarios to run concurrently')

    sample = commands.add_parser('sample-config', help='Write the default configuration to a file')
    sample.add_argument('path', help='Target file; .yaml or .yml writes YAML, anything else JSON')
    return parser


def load_config(args: argparse.Namespace) -> Config:
    """Config with file, environment and flag layers applied."""
    manager = ConfigManager(args.config)
    manager.apply_overrides(
        out_dir=args.out,
        seed=args.seed,
        precision=args.precision,
        horizon=getattr(args, 'horizon', None),
        samples=getattr(args, 'samples', None),
        log_level=args.log_level,
    )
    return manager.config


def dispatch(args: argparse.Namespace, config: Config) -> int:
    """
    Run the selected command and map failures to exit codes.

    Returns:
        0 on success, 2 config error, 3 solver failure, 4 simulation fall
    """
    logger.info(f"Running command '{args.command}'")
    try:
        if args.command == 'plan':
            paths = cmd_plan(config)
        elif args.command == 'sensitivity':
            paths = cmd_sensitivity(config, fd_check=args.fd_check)
        elif args.command == 'simulate':
            paths = cmd_simulate(config, sweep_path=args.sweep)
        else:
            paths = cmd_sample_config(args.path)
    except (ConfigError, ScenarioError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except PlanFailedError as e:
        logger.error(f"Simulation fell at t={e.time:.3f} s: {e}")
        return EXIT_FALL
    except (QpError, SequencingError, SensitivityError) as e:
        logger.error(f"Solver failure: {e}")
        return EXIT_SOLVER_FAILURE

    logger.info(f"Command '{args.command}' wrote {len(paths)} files")
    return EXIT_OK
