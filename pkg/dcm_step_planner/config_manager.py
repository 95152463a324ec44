"""
Configuration Manager for the step planner commands.
Loads sequencer parameters, plan/sensitivity contexts, the simulation scenario
and output settings from a JSON or YAML document, with environment overrides.
"""
import json
import os
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from .horizon import TimingAnchor
from .models import SequencerParams, StanceContext, StepSide
from .sequencer import nominal_dcm_offset
from .simulator import Scenario

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path("config") / "default.json"
FOOT_NAMES = ("left", "right")


class ConfigError(Exception):
    """Raised for malformed or unknown configuration."""
    pass


@dataclass
class PlanConfig:
    """Initial stance for fixed-horizon sequence generation."""
    horizon: float = 3.0
    p_ini: List[float] = field(default_factory=lambda: [0.0, 0.0])
    t_mea: float = 0.0
    zeta_mea: Optional[List[float]] = None  # None: on the nominal orbit
    side_next: str = StepSide.NEGATIVE.value
    anchor: str = TimingAnchor.MEASUREMENT.value

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        StepSide(self.side_next)
        TimingAnchor(self.anchor)

    def context(self, params: SequencerParams) -> StanceContext:
        side = StepSide(self.side_next)
        zeta = self.zeta_mea
        if zeta is None:
            zeta = [p + b for p, b in zip(self.p_ini, nominal_dcm_offset(params, side.opposite))]
        return StanceContext(self.p_ini, self.t_mea, zeta, side)


@dataclass
class SensitivityConfig:
    """Context and sampling settings for the sensitivity command."""
    p0: List[float] = field(default_factory=lambda: [-0.12, 0.10])
    t: float = 0.229
    zeta_hat: List[float] = field(default_factory=lambda: [-0.12, -0.07])
    side_next: str = StepSide.NEGATIVE.value
    samples: int = 1000
    sigma: float = 0.005
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.samples < 0:
            raise ValueError("samples must be non-negative")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        StepSide(self.side_next)

    def context(self) -> StanceContext:
        return StanceContext(self.p0, self.t, self.zeta_hat, StepSide(self.side_next))


@dataclass
class OutputConfig:
    out_dir: str = "output"
    precision: int = 17

    def __post_init__(self):
        if not 1 <= self.precision <= 17:
            raise ValueError("precision must be between 1 and 17")


@dataclass
class Config:
    """Complete configuration of one command invocation."""
    sequencer: SequencerParams = field(default_factory=SequencerParams)
    plan: PlanConfig = field(default_factory=PlanConfig)
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    scenario: Scenario = field(default_factory=Scenario)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    negative_side_foot: str = "left"
    log_level: str = "INFO"

    def foot_name(self, side: StepSide) -> str:
        """Physical foot executing a step in the given direction."""
        if side is StepSide.NEGATIVE:
            return self.negative_side_foot
        return FOOT_NAMES[1 - FOOT_NAMES.index(self.negative_side_foot)]


def _check_keys(section: str, data: Dict[str, Any], allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")


def _section_fields(cls) -> List[str]:
    return [f.name for f in fields(cls)]


class ConfigManager:
    """Manages configuration for the planner commands."""

    SECTIONS = ("sequencer", "plan", "sensitivity", "scenario", "output",
                "seed", "negative_side_foot", "log_level")

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            config_path: JSON or YAML config document. Defaults to config/default.json
                when it exists, otherwise built-in defaults.
        """
        self.config_path = Path(config_path) if config_path else None
        self.config = Config()
        self._load_configurations()

    def _load_configurations(self):
        """Load the config document, then environment overrides."""
        data = self._load_config_file()
        _check_keys("config", data, self.SECTIONS)
        try:
            self._load_sequencer_config(data.get("sequencer", {}))
            self._load_plan_config(data.get("plan", {}))
            self._load_sensitivity_config(data.get("sensitivity", {}))
            self._load_scenario_config(data.get("scenario", {}))
            self._load_output_config(data.get("output", {}))
            if "seed" in data:
                self.set_seed(int(data["seed"]))
            if "negative_side_foot" in data:
                self.config.negative_side_foot = data["negative_side_foot"]
            if "log_level" in data:
                self.config.log_level = str(data["log_level"]).upper()
            self.config.scenario.check_commands(self.config.sequencer)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e
        if self.config.negative_side_foot not in FOOT_NAMES:
            raise ConfigError("negative_side_foot must be 'left' or 'right'")

        self._load_env_overrides()
        source = self.config_path or "built-in defaults"
        logger.info(f"Configuration loaded from {source}")

    def _load_config_file(self) -> Dict[str, Any]:
        """Read the config document as a dict."""
        path = self.config_path
        if path is None:
            if not DEFAULT_CONFIG_FILE.exists():
                logger.info("No config file given, using defaults")
                return {}
            path = self.config_path = DEFAULT_CONFIG_FILE
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")

        try:
            with open(path, 'r', encoding='utf-8') as f:
                if path.suffix in (".yaml", ".yml"):
                    data = yaml.safe_load(f)
                else:
                    data = json.load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e

        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping at the top level")
        return data

    def _load_sequencer_config(self, data: Dict[str, Any]):
        _check_keys("sequencer", data, _section_fields(SequencerParams))
        self.config.sequencer = SequencerParams.from_dict(data)

    def _load_plan_config(self, data: Dict[str, Any]):
        _check_keys("plan", data, _section_fields(PlanConfig))
        self.config.plan = PlanConfig(**data)

    def _load_sensitivity_config(self, data: Dict[str, Any]):
        _check_keys("sensitivity", data, _section_fields(SensitivityConfig))
        self.config.sensitivity = SensitivityConfig(**data)

    def _load_scenario_config(self, data: Dict[str, Any]):
        _check_keys("scenario", data, _section_fields(Scenario))
        self.config.scenario = Scenario.from_dict(data)

    def _load_output_config(self, data: Dict[str, Any]):
        _check_keys("output", data, _section_fields(OutputConfig))
        self.config.output = OutputConfig(**data)

    def _load_env_overrides(self):
        """Load environment variable overrides."""
        if os.getenv('DCM_PLANNER_OUT_DIR'):
            self.config.output.out_dir = os.getenv('DCM_PLANNER_OUT_DIR')

        if os.getenv('DCM_PLANNER_SEED'):
            try:
                self.set_seed(int(os.getenv('DCM_PLANNER_SEED')))
            except ValueError:
                logger.warning("Invalid DCM_PLANNER_SEED environment variable")

        if os.getenv('DCM_PLANNER_PRECISION'):
            try:
                self.set_precision(int(os.getenv('DCM_PLANNER_PRECISION')))
            except (ValueError, ConfigError):
                logger.warning("Invalid DCM_PLANNER_PRECISION environment variable")

        if os.getenv('DCM_PLANNER_LOG_LEVEL'):
            self.config.log_level = os.getenv('DCM_PLANNER_LOG_LEVEL').upper()

    def set_seed(self, seed: int):
        """Set the master seed; the scenario noise stream follows it."""
        self.config.seed = seed
        self.config.scenario.seed = seed

    def set_precision(self, precision: int):
        if not 1 <= precision <= 17:
            raise ConfigError("precision must be between 1 and 17")
        self.config.output.precision = precision

    def apply_overrides(self, out_dir: Optional[str] = None, seed: Optional[int] = None,
                        precision: Optional[int] = None, horizon: Optional[float] = None,
                        samples: Optional[int] = None, log_level: Optional[str] = None):
        """Apply command-line overrides, the last layer of precedence."""
        if out_dir is not None:
            self.config.output.out_dir = out_dir
        if seed is not None:
            self.set_seed(seed)
        if precision is not None:
            self.set_precision(precision)
        if horizon is not None:
            if horizon < 0:
                raise ConfigError("horizon must be non-negative")
            self.config.plan.horizon = horizon
        if samples is not None:
            if samples < 0:
                raise ConfigError("samples must be non-negative")
            self.config.sensitivity.samples = samples
        if log_level is not None:
            self.config.log_level = log_level.upper()


def create_sample_config(path: str) -> Path:
    """Write a config document holding every default value, as JSON or YAML by suffix."""
    config_file = Path(path)
    sample = {
        "sequencer": SequencerParams().to_dict(),
        "plan": {f.name: getattr(PlanConfig(), f.name) for f in fields(PlanConfig)},
        "sensitivity": {f.name: getattr(SensitivityConfig(), f.name)
                        for f in fields(SensitivityConfig)},
        "output": {f.name: getattr(OutputConfig(), f.name) for f in fields(OutputConfig)},
        "seed": 0,
        "negative_side_foot": "left",
    }
    config_file.parent.mkdir(parents=True, exist_ok=True)
    with open(config_file, 'w', encoding='utf-8') as f:
        if config_file.suffix in (".yaml", ".yml"):
            yaml.safe_dump(sample, f, default_flow_style=False, sort_keys=False)
        else:
            json.dump(sample, f, indent=2)
            f.write("\n")
    logger.info(f"Sample configuration created at: {config_file}")
    return config_file
