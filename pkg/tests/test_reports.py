"""
Tests for report generators and exports.
"""

import json

import numpy as np
import pandas as pd
import pytest

from erpfmpc.dynamics import VehicleState
from erpfmpc.exceptions import ValidationError
from erpfmpc.harness import Metrics, MonteCarloSummary, compute_metrics, run_scenario
from erpfmpc.reports import (
    FieldGridSpec,
    MetricsJSONGenerator,
    MetricsMarkdownGenerator,
    dump_field,
    export_log,
    field_grid,
    read_trajectory_csv,
    run_directory,
    run_summary,
    write_benchmark,
)
from erpfmpc.risk_field import HistoryBuffer, Obstacle, RiskFieldParams
from erpfmpc.scenarios import LaneGeometry, ReferenceSpec, Scenario


@pytest.fixture(scope="module")
def short_log():
    scenario = Scenario(
        name="short",
        ego=VehicleState(0.0, 1.75, 30.0),
        obstacles=(Obstacle("HDV1", (25.0, 1.75), (22.0, 0.0)),),
        lanes=LaneGeometry(),
        reference=ReferenceSpec(kind="lane_keep", v_ref=30.0, y_start=1.75),
        duration=0.5,
    )
    return run_scenario(scenario, "erpf_mpc")


def _history(*values):
    buf = HistoryBuffer(10)
    for value in values:
        buf.push(value)
    return buf


def test_run_directory_layout(tmp_path):
    """One directory per scenario, controller and seed."""
    path = run_directory(str(tmp_path), "scenario2", "rpf_mpc", 7)

    assert path == tmp_path / "scenario2" / "rpf_mpc" / "seed_7"


def test_export_log_writes_all_files(short_log, tmp_path):
    """All formats land in the run directory."""
    generated = export_log(short_log, str(tmp_path / "run"))

    assert set(generated) == {"trajectory", "diagnostics", "metrics", "summary"}
    for path in generated.values():
        assert (tmp_path / "run" / path.split("/")[-1]).exists()


def test_trajectory_header_order(short_log, tmp_path):
    """Columns follow the documented order."""
    path = export_log(short_log, str(tmp_path), formats=["csv"])["trajectory"]

    with open(path) as f:
        header = f.readline().strip()
    assert header == "t,x,y,v,a_cmd,vy_cmd,d_HDV1,V_erpf,eta_HDV1"


def test_trajectory_round_trip(short_log, tmp_path):
    """Exported values reload to within 1e-9."""
    path = export_log(short_log, str(tmp_path), formats=["csv"])["trajectory"]

    reloaded = read_trajectory_csv(path)

    np.testing.assert_allclose(reloaded.to_numpy(), short_log.to_frame().to_numpy(), rtol=1e-9, atol=1e-12)
    assert len(reloaded) == short_log.n_steps


def test_exports_are_byte_identical(short_log, tmp_path):
    """Exporting the same run twice gives identical files."""
    first = export_log(short_log, str(tmp_path / "a"))
    second = export_log(short_log, str(tmp_path / "b"))

    for key in first:
        with open(first[key], "rb") as f1, open(second[key], "rb") as f2:
            assert f1.read() == f2.read()


def test_diagnostics_columns(short_log, tmp_path):
    """Solver diagnostics carry iterations, cost and operation counts."""
    path = export_log(short_log, str(tmp_path), formats=["csv"])["diagnostics"]

    frame = pd.read_csv(path)

    assert frame.columns.tolist() == ["t", "k", "iterations", "cost", "grad_norm", "converged",
                                      "active_constraints", "cbf_fallback", "flops"]
    assert frame["k"].tolist() == list(range(short_log.n_steps))


def test_metrics_json_contents(short_log, tmp_path):
    """The JSON summary holds metrics, events, alerts and counts."""
    path = export_log(short_log, str(tmp_path), formats=["json"])["metrics"]

    with open(path) as f:
        summary = json.load(f)

    assert summary["scenario"] == "short"
    assert summary["controller"] == "erpf_mpc"
    assert summary["seed"] == 0
    assert set(summary["metrics"]) == {"collision_count", "min_distance", "avg_speed", "max_du",
                                       "lane_change_time", "flops_total", "flops_per_step",
                                       "n_steps", "valid"}
    assert summary["failure"] is None
    assert summary["flops"]["flops_per_interaction"] == 17


def test_unknown_format_rejected(short_log, tmp_path):
    """Only csv, json and markdown are known."""
    with pytest.raises(ValidationError):
        export_log(short_log, str(tmp_path), formats=["parquet"])


def test_markdown_summary_sections(short_log):
    """The summary lists metrics and collision events."""
    summary = run_summary(short_log, compute_metrics(short_log), 2.0)
    summary["alerts"] = [[0.3, "HDV1"]]
    summary["failure"] = "tick 4 (t=0.40 s): non-finite objective"

    text = MetricsMarkdownGenerator(summary).to_string()

    assert text.startswith("# Run short / erpf_mpc / seed 0")
    assert "## Metrics" in text
    assert "## Collision Events" in text
    assert "## Evolution Factor Alerts" in text
    assert "- t = 0.3 s: HDV1" in text
    assert "## Failure" in text


def test_json_non_finite_as_null():
    """Infinite and NaN values become null."""
    text = MetricsJSONGenerator({"min_distance": float("inf"), "mean": np.float64("nan"),
                                 "n": np.int64(3)}).to_string()

    assert json.loads(text) == {"min_distance": None, "mean": None, "n": 3}


def test_field_grid_layout():
    """x varies fastest; columns are fixed."""
    spec = FieldGridSpec(0.0, 2.0, 0.0, 1.0, 1.0)

    frame = field_grid(VehicleState(0.0, 0.0, 20.0), [], {}, spec, RiskFieldParams())

    assert frame.columns.tolist() == ["x", "y", "v_erpf", "v_rpf"]
    assert frame["x"].tolist() == [0.0, 1.0, 2.0, 0.0, 1.0, 2.0]
    assert frame["y"].tolist() == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
    assert (frame["v_erpf"] == 0.0).all()


def test_field_grid_zero_far_from_obstacles():
    """Cells beyond d_safe carry no risk."""
    spec = FieldGridSpec(50.0, 60.0, 0.0, 7.0, 0.5)
    obstacles = [Obstacle("HDV1", (0.0, 1.75), (20.0, 0.0))]

    frame = field_grid(VehicleState(-5.0, 1.75, 20.0), obstacles, {}, spec, RiskFieldParams())

    assert (frame["v_erpf"] == 0.0).all()
    assert (frame["v_rpf"] == 0.0).all()


def test_field_grid_dominates_static_field():
    """Evolution factors never shrink the field."""
    spec = FieldGridSpec(-15.0, 15.0, -5.0, 8.0, 0.5)
    obstacles = [Obstacle("HDV1", (0.0, 1.75), (20.0, 0.0))]
    histories = {"HDV1": _history(12.0, 9.0, 7.0)}

    frame = field_grid(VehicleState(-7.0, 1.75, 20.0), obstacles, histories, spec, RiskFieldParams())

    assert (frame["v_erpf"] >= frame["v_rpf"]).all()
    assert frame["v_rpf"].max() > 0.0


def test_field_grid_approaching_exceeds_receding():
    """A closing obstacle raises the field more than an opening one."""
    spec = FieldGridSpec(-10.0, 10.0, 0.0, 3.5, 0.5)
    obstacles = [Obstacle("HDV1", (0.0, 1.75), (20.0, 0.0))]
    state = VehicleState(-6.0, 1.75, 20.0)

    approaching = field_grid(state, obstacles, {"HDV1": _history(9.0, 8.0, 6.0)}, spec, RiskFieldParams())
    receding = field_grid(state, obstacles, {"HDV1": _history(3.0, 4.0, 6.0)}, spec, RiskFieldParams())

    active = approaching["v_rpf"] > 0
    assert (approaching.loc[active, "v_erpf"] > receding.loc[active, "v_erpf"]).all()
    np.testing.assert_array_equal(approaching["v_rpf"], receding["v_rpf"])


def test_field_grid_seeds_missing_history(tmp_path):
    """An obstacle without history is seeded with its current distance."""
    spec = FieldGridSpec(-5.0, 5.0, 0.0, 3.5, 0.5)
    histories = {}
    path = dump_field(VehicleState(-8.0, 1.75, 20.0), [Obstacle("HDV1", (0.0, 1.75), (20.0, 0.0))],
                      histories, spec, RiskFieldParams(), str(tmp_path / "field" / "tick_0.csv"))

    assert histories["HDV1"].values() == (8.0,)
    assert pd.read_csv(path).columns.tolist() == ["x", "y", "v_erpf", "v_rpf"]


def test_field_grid_spec_validation():
    """Resolution must be positive."""
    with pytest.raises(ValidationError):
        FieldGridSpec(0.0, 1.0, 0.0, 1.0, 0.0)


def test_write_benchmark(tmp_path):
    """Benchmark exports hold per-controller statistics and all runs."""
    rows = [
        {"seed": 0, **Metrics(0, 4.0, 29.0, 1.0, None, 100.0, 10.0, 80).to_dict()},
        {"seed": 2, **Metrics(1, 1.5, 31.0, 2.0, None, 120.0, 12.0, 80).to_dict()},
    ]
    summaries = {
        "erpf_mpc": MonteCarloSummary("erpf_mpc", pd.DataFrame(rows), invalid_seeds=[1]),
    }

    generated = write_benchmark("scenario2", summaries, str(tmp_path))

    with open(generated["summary"]) as f:
        payload = json.load(f)
    stats = payload["controllers"]["erpf_mpc"]
    assert stats["n_runs"] == 3
    assert stats["n_valid"] == 2
    assert stats["invalid_seeds"] == [1]
    assert stats["collision_count"] == {"mean": 0.5, "min": 0.0, "max": 1.0}
    assert stats["avg_speed"]["mean"] == pytest.approx(30.0)

    runs = pd.read_csv(generated["runs"])
    assert runs["controller"].tolist() == ["erpf_mpc", "erpf_mpc"]
    with open(generated["markdown"]) as f:
        assert "| erpf_mpc | 3 | 2 |" in f.read()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
