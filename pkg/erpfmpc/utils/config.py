"""
Configuration utilities for ERPF-MPC runs.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

import yaml

from erpfmpc.exceptions import ConfigError, ValidationError
from erpfmpc.mpc_solver import (
    BoxConstraints,
    CBFParams,
    MPCWeights,
    PlannerConfig,
    SolverSettings,
)
from erpfmpc.risk_ellipse import EllipseParams
from erpfmpc.risk_field import RiskFieldParams

logger = logging.getLogger(__name__)

# YAML section -> parameter class
PARAMETER_SECTIONS = {
    "risk_field": RiskFieldParams,
    "ellipse": EllipseParams,
    "weights": MPCWeights,
    "constraints": BoxConstraints,
    "solver": SolverSettings,
    "cbf": CBFParams,
}
HORIZON_KEYS = {"dt": "dt", "N": "horizon"}
HARNESS_KEYS = {"collision_threshold", "count_flops"}
OVERRIDE_SECTIONS = ("horizon", *PARAMETER_SECTIONS, "harness")
RUN_KEYS = ("scenario", "controller", "seed", "runs", "workers", "output_dir", "overrides")


@dataclass
class RunConfig:
    """
    One invocation of the simulator.

    Attributes:
        scenario: Preset name or path to a scenario YAML file
        controller: Controller registry name
        seed: Seed of the HDV noise
        runs: Monte Carlo runs per controller for ``bench``
        workers: Parallel worker processes for ``bench``
        output_dir: Root of the per-run export directories
        overrides: Parameter overrides keyed by section
    """

    scenario: str = "scenario1"
    controller: str = "erpf_mpc"
    seed: int = 0
    runs: int = 20
    workers: int = 1
    output_dir: str = "results"
    overrides: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("seed", "runs", "workers"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(name, "must be an integer")
        if self.seed < 0:
            raise ValidationError("seed", "must be >= 0")
        if self.runs < 1:
            raise ValidationError("runs", "must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers", "must be >= 1")
        for name in ("scenario", "controller", "output_dir"):
            if not isinstance(getattr(self, name), str):
                raise ValidationError(name, "must be a string")
        validate_overrides(self.overrides)

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "RunConfig":
        data = dict(data or {})
        unknown = sorted(set(data) - set(RUN_KEYS))
        if unknown:
            raise ValidationError(unknown[0], "unknown key")
        if data.get("overrides") is None:
            data["overrides"] = {}
        return cls(**data)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def validate_overrides(overrides: Mapping[str, Any]) -> None:
    """
    Reject unknown sections or keys and check every value against the
    parameter type it feeds.

    Raises:
        ValidationError: On the first offending field
    """
    if not isinstance(overrides, Mapping):
        raise ValidationError("overrides", "must be a mapping")
    for section, values in overrides.items():
        if section not in OVERRIDE_SECTIONS:
            raise ValidationError(f"overrides.{section}", "unknown section")
        if not isinstance(values, Mapping):
            raise ValidationError(f"overrides.{section}", "must be a mapping")
        if section == "horizon":
            allowed = set(HORIZON_KEYS)
        elif section == "harness":
            allowed = HARNESS_KEYS
        else:
            allowed = {f.name for f in dataclasses.fields(PARAMETER_SECTIONS[section])}
        unknown = sorted(set(values) - allowed)
        if unknown:
            raise ValidationError(f"{section}.{unknown[0]}", "unknown key")
    build_planner_config(overrides)
    harness = overrides.get("harness", {})
    threshold = harness.get("collision_threshold", 2.0)
    if isinstance(threshold, bool) or not isinstance(threshold, (int, float)) or not threshold > 0:
        raise ValidationError("harness.collision_threshold", "must be a number > 0")
    if not isinstance(harness.get("count_flops", True), bool):
        raise ValidationError("harness.count_flops", "must be a boolean")


def _section(cls, name: str, values: Mapping[str, Any]):
    try:
        return cls(**values)
    except TypeError as e:
        raise ValidationError(name, str(e)) from e


def build_planner_config(overrides: Optional[Mapping[str, Any]] = None) -> PlannerConfig:
    """
    Planner configuration with defaults filled in from the overrides tree.

    Raises:
        ValidationError: If a value violates its parameter's invariants
    """
    overrides = overrides or {}
    horizon = {HORIZON_KEYS[key]: value for key, value in overrides.get("horizon", {}).items()}
    sections = {
        "risk": _section(RiskFieldParams, "risk_field", overrides.get("risk_field", {})),
        "ellipse": _section(EllipseParams, "ellipse", overrides.get("ellipse", {})),
        "weights": _section(MPCWeights, "weights", overrides.get("weights", {})),
        "bounds": _section(BoxConstraints, "constraints", overrides.get("constraints", {})),
        "solver": _section(SolverSettings, "solver", overrides.get("solver", {})),
        "cbf": _section(CBFParams, "cbf", overrides.get("cbf", {})),
    }
    try:
        return PlannerConfig(**horizon, **sections)
    except TypeError as e:
        raise ValidationError("horizon", str(e)) from e


def load_config(config_path: str) -> RunConfig:
    """
    Load a run configuration from a YAML file.

    Args:
        config_path: Path to YAML configuration file

    Returns:
        Validated configuration, defaults filled in

    Raises:
        FileNotFoundError: If config file doesn't exist
        ConfigError: If the file is not valid YAML, with its position
        ValidationError: If a key is unknown or a value is invalid
    """
    config_file = Path(config_path)

    if not config_file.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_file, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            column = mark.column + 1 if mark is not None else None
            raise ConfigError(f"Invalid YAML in {config_path}: {getattr(e, 'problem', e)}",
                              line, column) from e

    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"Top level of {config_path} must be a mapping")
    return RunConfig.from_dict(data)


def get_default_config() -> Dict[str, Any]:
    """
    Get default configuration.

    Returns:
        Default configuration dictionary with every override section spelled out
    """
    planner = PlannerConfig()
    weights = planner.weights
    return {
        "scenario": "scenario1",
        "controller": "erpf_mpc",
        "seed": 0,
        "runs": 20,
        "workers": 1,
        "output_dir": "results",
        "overrides": {
            "horizon": {"dt": planner.dt, "N": planner.horizon},
            "risk_field": {
                "d_safe": planner.risk.d_safe,
                "epsilon": planner.risk.epsilon,
                "lam": planner.risk.lam,
                "n_history": planner.risk.n_history,
                "alpha": planner.risk.alpha,
                "evolution": planner.risk.evolution,
            },
            "ellipse": dataclasses.asdict(planner.ellipse),
            "weights": {
                "Q": [float(v) for v in weights.Q.diagonal()],
                "R": [float(v) for v in weights.R.diagonal()],
                "gamma": weights.gamma,
            },
            "constraints": dataclasses.asdict(planner.bounds),
            "solver": dataclasses.asdict(planner.solver),
            "cbf": dataclasses.asdict(planner.cbf),
            "harness": {"collision_threshold": 2.0, "count_flops": True},
        },
    }


def save_config(config, config_path: str):
    """
    Save configuration to YAML file.

    Args:
        config: RunConfig or configuration dictionary
        config_path: Path to save configuration file
    """
    if isinstance(config, RunConfig):
        config = config.to_dict()
    with open(config_path, "w") as f:
        yaml.dump(config, f, default_flow_style=False, sort_keys=False)


def merge_configs(base_config: Dict[str, Any],
                  override_config: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Merge two configuration dictionaries.

    Args:
        base_config: Base configuration
        override_config: Configuration to override base

    Returns:
        Merged configuration
    """
    merged = dict(base_config)

    for key, value in override_config.items():
        if key in merged and isinstance(merged[key], dict) and isinstance(value, Mapping):
            merged[key] = merge_configs(merged[key], value)
        else:
            merged[key] = value

    return merged


def parse_set_option(option: str) -> Tuple[str, Any]:
    """
    Split ``a.b=value`` into its dotted key and YAML-typed value.

    Raises:
        ValidationError: If the option has no ``=`` or an empty key
    """
    key, sep, raw = option.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ValidationError("--set", f"expected key=value, got '{option}'")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ValidationError(key, f"unparseable value '{raw}'") from e
    return key, value


def apply_overrides(config: Mapping[str, Any], options: Iterable[str]) -> Dict[str, Any]:
    """
    Apply ``--set`` options to a configuration dictionary.

    Keys whose first segment is an override section are placed under
    ``overrides``; other keys address the top-level run settings.
    """
    patch: Dict[str, Any] = {}
    for option in options:
        key, value = parse_set_option(option)
        path = key.split(".")
        if path[0] in OVERRIDE_SECTIONS:
            path = ["overrides", *path]
        node = patch
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    logger.debug("Command-line overrides: %s", patch)
    return merge_configs(dict(config), patch)


def effective_overrides(run: RunConfig, scenario_overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Scenario-required sections with the run's own overrides taking precedence."""
    return merge_configs(dict(scenario_overrides), run.overrides)
