"""
Tests for configuration utilities.
"""

import pytest
import yaml

from erpfmpc.exceptions import ConfigError, ValidationError
from erpfmpc.utils.config import (
    RunConfig,
    apply_overrides,
    build_planner_config,
    effective_overrides,
    get_default_config,
    load_config,
    merge_configs,
    parse_set_option,
    save_config,
)


def test_get_default_config():
    """Test getting default configuration."""
    config = get_default_config()

    assert config["scenario"] == "scenario1"
    assert config["controller"] == "erpf_mpc"
    for section in ("horizon", "risk_field", "ellipse", "weights", "constraints", "solver", "cbf", "harness"):
        assert section in config["overrides"]
    assert config["overrides"]["horizon"] == {"dt": 0.1, "N": 30}
    assert config["overrides"]["risk_field"]["d_safe"] == 10.0


def test_save_and_load_config(tmp_path):
    """Test saving and loading configuration."""
    config = get_default_config()
    config_path = tmp_path / "test_config.yaml"

    # Save config
    save_config(config, str(config_path))
    assert config_path.exists()

    # Load config
    loaded = load_config(str(config_path))
    assert loaded.to_dict() == config


def test_save_run_config(tmp_path):
    """RunConfig instances are written as plain mappings."""
    config_path = tmp_path / "run.yaml"
    save_config(RunConfig(scenario="highway", seed=4), str(config_path))

    loaded = load_config(str(config_path))

    assert loaded.scenario == "highway"
    assert loaded.seed == 4


def test_load_nonexistent_config():
    """Test loading non-existent configuration file."""
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/config.yaml")


def test_load_empty_config(tmp_path):
    """An empty file means all defaults."""
    config_path = tmp_path / "empty.yaml"
    config_path.write_text("")

    assert load_config(str(config_path)) == RunConfig()


def test_load_invalid_yaml_reports_position(tmp_path):
    """Parse errors carry line and column."""
    config_path = tmp_path / "broken.yaml"
    config_path.write_text("scenario: scenario1\noverrides:\n  risk_field: {d_safe: 10\n")

    with pytest.raises(ConfigError) as excinfo:
        load_config(str(config_path))
    assert excinfo.value.line is not None
    assert excinfo.value.column is not None


def test_load_non_mapping_config(tmp_path):
    """The top level must be a mapping."""
    config_path = tmp_path / "list.yaml"
    config_path.write_text("- scenario1\n- scenario2\n")

    with pytest.raises(ConfigError):
        load_config(str(config_path))


def test_unknown_keys_rejected(tmp_path):
    """Unknown top-level keys, sections and parameters are validation errors."""
    with pytest.raises(ValidationError):
        RunConfig.from_dict({"scenaro": "scenario1"})
    with pytest.raises(ValidationError):
        RunConfig.from_dict({"overrides": {"physics": {}}})
    with pytest.raises(ValidationError) as excinfo:
        RunConfig.from_dict({"overrides": {"risk_field": {"dsafe": 5.0}}})
    assert excinfo.value.field == "risk_field.dsafe"


def test_invalid_values_rejected():
    """Values are checked against the parameter they feed."""
    with pytest.raises(ValidationError):
        RunConfig(runs=0)
    with pytest.raises(ValidationError):
        RunConfig(seed="one")
    with pytest.raises(ValidationError):
        RunConfig(overrides={"risk_field": {"lam": -2.0}})
    with pytest.raises(ValidationError):
        RunConfig(overrides={"horizon": {"N": 0}})
    with pytest.raises(ValidationError):
        RunConfig(overrides={"harness": {"collision_threshold": 0}})


def test_build_planner_config():
    """Override sections map onto the planner parameters."""
    config = build_planner_config({
        "horizon": {"dt": 0.05, "N": 20},
        "risk_field": {"lam": 4.0, "evolution": "binary"},
        "weights": {"gamma": 10.0, "Q": [1.0, 5.0, 1.0]},
        "constraints": {"a_lo": -4.0},
    })

    assert config.dt == 0.05
    assert config.horizon == 20
    assert config.risk.lam == 4.0
    assert config.risk.evolution == "binary"
    assert config.weights.gamma == 10.0
    assert config.weights.Q[1, 1] == 5.0
    assert config.bounds.a_lo == -4.0
    assert config.bounds.a_hi == 3.0


def test_merge_configs():
    """Test merging configurations."""
    base = {
        "scenario": "scenario1",
        "overrides": {
            "risk_field": {"d_safe": 10.0, "lam": 8.0},
            "solver": {"max_iters": 200},
        },
    }

    override = {
        "overrides": {
            "risk_field": {"lam": 2.0},
            "cbf": {"kappa": 0.5},
        },
    }

    merged = merge_configs(base, override)

    # Check merged values
    assert merged["overrides"]["risk_field"]["lam"] == 2.0
    assert merged["overrides"]["risk_field"]["d_safe"] == 10.0  # Preserved from base
    assert merged["overrides"]["solver"]["max_iters"] == 200  # Preserved from base
    assert merged["overrides"]["cbf"]["kappa"] == 0.5  # New from override
    assert base["overrides"]["risk_field"]["lam"] == 8.0


def test_parse_set_option():
    """Values are typed by YAML."""
    assert parse_set_option("risk_field.lam=4") == ("risk_field.lam", 4)
    assert parse_set_option("ellipse.enabled=true") == ("ellipse.enabled", True)
    assert parse_set_option("scenario=highway") == ("scenario", "highway")
    assert parse_set_option("weights.Q=[1, 10, 1]") == ("weights.Q", [1, 10, 1])
    with pytest.raises(ValidationError):
        parse_set_option("risk_field.lam")


def test_apply_overrides():
    """Section keys land under overrides; run keys stay at the top."""
    config = apply_overrides(get_default_config(), ["risk_field.lam=2.5", "seed=7", "horizon.N=20"])

    assert config["overrides"]["risk_field"]["lam"] == 2.5
    assert config["overrides"]["risk_field"]["d_safe"] == 10.0
    assert config["overrides"]["horizon"]["N"] == 20
    assert config["seed"] == 7
    assert RunConfig.from_dict(config).seed == 7


def test_effective_overrides():
    """Run overrides win over the scenario's required sections."""
    run = RunConfig(overrides={"ellipse": {"ef_threshold": 3.0}})

    merged = effective_overrides(run, {"ellipse": {"enabled": True}})

    assert merged == {"ellipse": {"enabled": True, "ef_threshold": 3.0}}
    assert build_planner_config(merged).ellipse.enabled is True


def test_config_file_is_plain_yaml(tmp_path):
    """Saved files load with a plain YAML parser."""
    config_path = tmp_path / "config.yaml"
    save_config(get_default_config(), str(config_path))

    with open(config_path) as f:
        data = yaml.safe_load(f)
    assert data["overrides"]["weights"]["R"] == [1.0, 1.0]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
