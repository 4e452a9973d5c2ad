"""
Tests for scenario presets, scenario files and trajectory replay.
"""

from pathlib import Path

import numpy as np
import pytest
import yaml

from erpfmpc.dynamics import VehicleState
from erpfmpc.exceptions import ConfigError, ValidationError
from erpfmpc.risk_field import Obstacle
from erpfmpc.scenarios import (
    LaneGeometry,
    ReferenceSpec,
    Scenario,
    UncertaintyModel,
    get_scenario,
    list_scenarios,
    load_replay_csv,
    load_scenario,
    replay_scenario,
    scenario_from_dict,
)

SAMPLE_REPLAY = Path(__file__).resolve().parents[1] / "data" / "samples" / "replay_tracks.csv"


def _scenario_dict():
    return {
        "ego": [0.0, 1.75, 30.0],
        "obstacles": [{"id": "HDV1", "p0": [40.0, 1.75], "vel": [20.0, 0.0]}],
        "reference": {"kind": "lane_change", "y_start": 1.75, "y_target": 5.25, "t_start": 1.0},
        "duration": 3.0,
    }


def test_presets_listed():
    """All named presets are available."""
    assert list_scenarios() == ["scenario1", "scenario2", "adaptive_ef", "highway",
                              "overtake_upper", "overtake_lower"]
    assert get_scenario("scenario1").n_steps == 80
    assert get_scenario("highway").lanes.centers == (1.75, 5.25, 8.75)


def test_unknown_preset_rejected():
    """Unknown names raise a validation error."""
    with pytest.raises(ValidationError):
        get_scenario("roundabout")


def test_lane_change_schedule():
    """Linear move from the start lane to the target lane."""
    ref = get_scenario("scenario1").reference

    np.testing.assert_allclose(ref.lateral([0.0, 1.5, 2.5, 3.5, 8.0]),
                               [1.75, 1.75, 3.5, 5.25, 5.25])
    assert ref.final_lateral == 5.25


def test_overtake_schedule_returns():
    """The overtake goes out and comes back."""
    ref = get_scenario("scenario2").reference

    assert float(ref.lateral(3.0)) == pytest.approx(5.25)
    assert float(ref.lateral(6.0)) == pytest.approx(1.75)
    assert ref.final_lateral == 1.75


def test_reference_window_anchored_at_ego():
    """The horizon starts at the ego x and advances at the reference speed."""
    ref = ReferenceSpec(kind="lane_keep", v_ref=30.0, y_start=5.25)
    window = ref.window(VehicleState(10.0, 5.0, 28.0), 2.0, 30, 0.1)

    assert window.horizon == 30
    assert window.states[0, 0] == 10.0
    assert window.states[1, 0] == pytest.approx(13.0)
    np.testing.assert_array_equal(window.states[:, 1], np.full(31, 5.25))
    np.testing.assert_array_equal(window.states[:, 2], np.full(31, 30.0))


def test_reference_requires_target():
    """Lane changes need a target lane; overtakes need a return time."""
    with pytest.raises(ValidationError):
        ReferenceSpec(kind="lane_change")
    with pytest.raises(ValidationError):
        ReferenceSpec(kind="overtake", y_target=5.25, t_start=1.0, t_duration=2.0, t_return=2.0)


def test_overtake_presets_pass_on_either_side():
    """Both overtake presets leave the middle lane and come back to it."""
    upper = get_scenario("overtake_upper").reference
    lower = get_scenario("overtake_lower").reference

    assert (upper.y_start, upper.y_target) == (5.25, 8.75)
    assert (lower.y_start, lower.y_target) == (5.25, 1.75)
    assert float(upper.lateral(3.0)) == pytest.approx(8.75)
    assert float(lower.lateral(3.0)) == pytest.approx(1.75)
    assert upper.final_lateral == lower.final_lateral == 5.25


def test_side_resolves_to_adjacent_lane():
    """The side names the lane next to the start lane."""
    lanes = LaneGeometry(centers=(1.75, 5.25, 8.75))

    assert lanes.adjacent(5.0, "upper") == 8.75
    assert lanes.adjacent(5.0, "lower") == 1.75
    assert lanes.adjacent(1.75, "upper") == 5.25
    with pytest.raises(ValidationError):
        lanes.adjacent(1.75, "lower")
    with pytest.raises(ValidationError):
        lanes.adjacent(5.25, "left")


def test_side_must_agree_with_explicit_target():
    """An explicit target on the wrong side is rejected."""
    lanes = LaneGeometry(centers=(1.75, 5.25, 8.75))
    ref = ReferenceSpec(kind="lane_change", y_start=5.25, y_target=1.75, side="upper")

    with pytest.raises(ValidationError):
        ref.resolve(lanes)
    agreeing = ReferenceSpec(kind="lane_change", y_start=5.25, y_target=8.75, side="upper")
    assert agreeing.resolve(lanes).y_target == 8.75


def test_unresolved_side_has_no_schedule():
    """Without a lane geometry a side cannot be turned into a lateral target."""
    ref = ReferenceSpec(kind="lane_change", y_start=1.75, side="upper")

    with pytest.raises(ValidationError):
        ref.lateral(1.0)
    with pytest.raises(ValidationError):
        ReferenceSpec(kind="lane_change", y_start=1.75, side="middle")


def test_scenario_from_dict_with_side():
    """Scenario files may name the overtaking side instead of the target lane."""
    data = _scenario_dict()
    data["lanes"] = {"centers": [1.75, 5.25]}
    data["reference"] = {"kind": "lane_change", "y_start": 1.75, "side": "upper", "t_start": 1.0}

    scenario = scenario_from_dict(data)

    assert scenario.reference.y_target == 5.25
    data["reference"]["side"] = "lower"
    with pytest.raises(ValidationError):
        scenario_from_dict(data)


def test_uncertainty_deterministic_and_bounded():
    """Same seed, same draws; draws stay inside the bound."""
    model = UncertaintyModel(bound=1.5)

    first = model.sample(7, 100, 3)
    np.testing.assert_array_equal(first, model.sample(7, 100, 3))
    assert first.shape == (100, 3)
    assert np.all(np.abs(first) <= 1.5)
    assert not np.array_equal(first, model.sample(8, 100, 3))


def test_zero_uncertainty_draws_zeros():
    """A zero bound gives exact zeros."""
    np.testing.assert_array_equal(UncertaintyModel(bound=0.0).sample(3, 10, 2), np.zeros((10, 2)))


def test_lane_band_defaults():
    """The band spans the outer lane edges."""
    lanes = LaneGeometry(centers=(1.75, 5.25), lane_width=3.5)

    assert lanes.band == (0.0, 7.0)
    assert lanes.ego_bounds() == (0.5, 6.5)


def test_scenario_validation():
    """Durations, ids and initial positions are checked."""
    ego = VehicleState(0.0, 1.75, 30.0)
    lanes = LaneGeometry()
    ref = ReferenceSpec()
    obstacle = Obstacle("HDV1", (40.0, 1.75), (20.0, 0.0))

    with pytest.raises(ValidationError):
        Scenario("bad", ego, (obstacle,), lanes, ref, duration=1.05)
    with pytest.raises(ValidationError):
        Scenario("bad", ego, (obstacle, obstacle), lanes, ref, duration=1.0)
    with pytest.raises(ValidationError):
        Scenario("bad", ego, (Obstacle("HDV1", (40.0, 12.0), (20.0, 0.0)),), lanes, ref, duration=1.0)


def test_scenario_from_dict():
    """A mapping with the documented keys builds a scenario."""
    scenario = scenario_from_dict(_scenario_dict(), name="merge")

    assert scenario.name == "merge"
    assert scenario.n_steps == 30
    assert scenario.obstacles[0].id == "HDV1"
    assert scenario.reference.kind == "lane_change"
    assert scenario.uncertainty is None


def test_scenario_from_dict_rejects_bad_input():
    """Unknown keys and missing fields are validation errors."""
    data = _scenario_dict()
    data["weather"] = "rain"
    with pytest.raises(ValidationError):
        scenario_from_dict(data)

    data = _scenario_dict()
    del data["ego"]
    with pytest.raises(ValidationError):
        scenario_from_dict(data)


def test_load_scenario_from_file(tmp_path):
    """Scenario files are named after their stem."""
    path = tmp_path / "merge.yaml"
    data = _scenario_dict()
    data["uncertainty"] = {"bound": 1.0}
    with open(path, "w") as f:
        yaml.dump(data, f)

    scenario = load_scenario(str(path))

    assert scenario.name == "merge"
    assert scenario.uncertainty.bound == 1.0


def test_load_scenario_reports_yaml_position(tmp_path):
    """Parse errors carry the line of the problem."""
    path = tmp_path / "broken.yaml"
    path.write_text("duration: 3.0\nego: [0.0, 1.75, 30.0\nobstacles: []\n")

    with pytest.raises(ConfigError) as excinfo:
        load_scenario(str(path))
    assert excinfo.value.line is not None


def test_load_scenario_unknown():
    """Neither preset nor file."""
    with pytest.raises(ValidationError):
        load_scenario("/nonexistent/scenario.yaml")


def test_load_replay_csv_resamples():
    """Tracks are interpolated onto the planner grid."""
    grid, tracks = load_replay_csv(str(SAMPLE_REPLAY), dt=0.1)

    assert len(grid) == 101
    assert sorted(tracks) == ["V2", "V3", "V6"]
    assert tracks["V3"].shape == (101, 2)
    np.testing.assert_allclose(tracks["V3"][10], [67.0, 1.75])
    np.testing.assert_allclose(tracks["V2"][-1], [321.0, 5.25])


def test_load_replay_csv_errors(tmp_path):
    """Missing files, missing columns and single samples are rejected."""
    with pytest.raises(FileNotFoundError):
        load_replay_csv(str(tmp_path / "missing.csv"))

    no_y = tmp_path / "no_y.csv"
    no_y.write_text("t,vehicle_id,x\n0,V1,0\n1,V1,10\n")
    with pytest.raises(ValidationError):
        load_replay_csv(str(no_y))

    single = tmp_path / "single.csv"
    single.write_text("t,vehicle_id,x,y\n0,V1,0,1.75\n1,V1,10,1.75\n0,V2,5,5.25\n")
    with pytest.raises(ValidationError):
        load_replay_csv(str(single))

    text = tmp_path / "text.csv"
    text.write_text("t,vehicle_id,x,y\n0,V1,zero,1.75\n1,V1,10,1.75\n")
    with pytest.raises(ValidationError):
        load_replay_csv(str(text))


def test_replay_scenario_replaces_obstacles():
    """Recorded tracks replace the preset HDVs."""
    scenario = replay_scenario(get_scenario("highway"), str(SAMPLE_REPLAY))

    assert scenario.name == "highway_replay"
    assert [o.id for o in scenario.obstacles] == ["V2", "V3", "V6"]
    assert scenario.n_steps == 100
    assert scenario.uncertainty is None
    assert scenario.tracks["V2"].shape == (101, 2)
    np.testing.assert_allclose(scenario.obstacles[0].vel, (28.0, 0.0))


def test_replay_scenario_widens_band(tmp_path):
    """Tracks outside the preset band widen it."""
    path = tmp_path / "wide.csv"
    path.write_text("t,vehicle_id,x,y\n0,V1,20,1.75\n1,V1,45,9.0\n")

    scenario = replay_scenario(get_scenario("scenario1"), str(path))

    assert scenario.lanes.band[1] == pytest.approx(9.0)
    assert scenario.n_steps == 10


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
