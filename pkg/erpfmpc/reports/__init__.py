"""
Report generators and data exports for simulation results.

Every export is deterministic: floats are written with 12 significant
digits and no timestamps enter file contents or names.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from erpfmpc.dynamics import VehicleState
from erpfmpc.exceptions import ValidationError
from erpfmpc.harness import SimulationLog, compute_metrics, detect_collision, Metrics, MonteCarloSummary
from erpfmpc.risk_field import HistoryBuffer, Obstacle, RiskFieldParams, distance, evaluate_field, evolution_factors

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
FIELD_COLUMNS = ["x", "y", "v_erpf", "v_rpf"]
EXPORT_FORMATS = ("csv", "json", "markdown")


def _jsonable(value: Any) -> Any:
    """Plain-Python view of numpy scalars and arrays for json.dump."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class ReportGenerator:
    """Base class for report generators."""

    def __init__(self, payload: Any):
        """
        Initialize report generator.

        Args:
            payload: Log, metrics or summary the report is built from
        """
        self.payload = payload

    def to_string(self) -> str:
        raise NotImplementedError

    def generate(self, output_path: str) -> str:
        """
        Generate report and save to file.

        Args:
            output_path: Path to save the report

        Returns:
            Path to generated report
        """
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w", newline="") as f:
            f.write(self.to_string())
        return output_path


class TrajectoryCSVGenerator(ReportGenerator):
    """Per-tick trajectory: t, x, y, v, a_cmd, vy_cmd, d_<id>..., V_erpf, eta_<id>..."""

    def to_string(self) -> str:
        return self.payload.to_frame().to_csv(index=False, float_format=FLOAT_FORMAT)


class DiagnosticsCSVGenerator(ReportGenerator):
    """Per-tick solver diagnostics and operation counts."""

    def to_string(self) -> str:
        return self.payload.diagnostics_frame().to_csv(index=False, float_format=FLOAT_FORMAT)


class MetricsJSONGenerator(ReportGenerator):
    """Structured summary of a run or a benchmark."""

    def to_string(self) -> str:
        return json.dumps(_jsonable(self.payload), indent=2) + "\n"


class MetricsMarkdownGenerator(ReportGenerator):
    """Human-readable run summary."""

    def to_string(self) -> str:
        summary = self.payload
        metrics = summary["metrics"]
        lines = [
            f"# Run {summary['scenario']} / {summary['controller']} / seed {summary['seed']}",
            "",
            f"**Status:** {'✅ VALID' if metrics['valid'] else '❌ ABORTED'}",
            "",
            "## Metrics",
            "",
        ]
        for key, value in metrics.items():
            lines.append(f"- **{key}:** {_format_value(value)}")
        lines.append("")

        events = summary.get("collisions", [])
        lines.append("## Collision Events")
        lines.append("")
        if events:
            for event in events:
                lines.append(f"- t = {event['start']:.1f}-{event['end']:.1f} s, "
                             f"{', '.join(event['obstacle_ids'])}, min {event['min_distance']:.2f} m")
        else:
            lines.append("None")
        lines.append("")

        alerts = summary.get("alerts", [])
        if alerts:
            lines.append("## Evolution Factor Alerts")
            lines.append("")
            for t, obstacle_id in alerts:
                lines.append(f"- t = {t:.1f} s: {obstacle_id}")
            lines.append("")

        if summary.get("failure"):
            lines.append("## Failure")
            lines.append("")
            lines.append(summary["failure"])
            lines.append("")
        return "\n".join(lines)


def _format_value(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else f"{value:.4g}"
    return str(value)


def run_directory(root: str, scenario: str, controller: str, seed: int) -> Path:
    """``root/scenario/controller/seed_<n>``, one per run."""
    return Path(root) / scenario / controller / f"seed_{seed}"


def run_summary(log: SimulationLog, metrics: Metrics, threshold: float) -> Dict[str, Any]:
    return {
        "scenario": log.scenario,
        "controller": log.controller,
        "seed": log.seed,
        "metrics": metrics.to_dict(),
        "collisions": [
            {"start": e.start, "end": e.end, "obstacle_ids": list(e.obstacle_ids),
             "min_distance": e.min_distance}
            for e in detect_collision(log, threshold)
        ],
        "alerts": [list(alert) for alert in log.alerts],
        "flops": dict(log.flops),
        "failure": log.failure,
    }


def export_log(log: SimulationLog, output_dir: str, formats: Optional[Sequence[str]] = None,
               metrics: Optional[Metrics] = None, threshold: float = 2.0) -> Dict[str, str]:
    """
    Write the exports of one run.

    Args:
        log: Completed simulation log
        output_dir: Run directory
        formats: Subset of csv, json, markdown; all when None
        metrics: Precomputed metrics, computed from the log when None
        threshold: Collision threshold for the event list

    Returns:
        Dictionary mapping export name to output path
    """
    formats = list(EXPORT_FORMATS) if formats is None else list(formats)
    unknown = [fmt for fmt in formats if fmt not in EXPORT_FORMATS]
    if unknown:
        raise ValidationError("formats", f"unknown export format {unknown[0]}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    generated = {}
    if "csv" in formats:
        generated["trajectory"] = TrajectoryCSVGenerator(log).generate(str(out / "trajectory.csv"))
        generated["diagnostics"] = DiagnosticsCSVGenerator(log).generate(str(out / "diagnostics.csv"))
    if "json" in formats or "markdown" in formats:
        if metrics is None and log.n_steps:
            metrics = compute_metrics(log, threshold)
        if metrics is not None:
            summary = run_summary(log, metrics, threshold)
            if "json" in formats:
                generated["metrics"] = MetricsJSONGenerator(summary).generate(str(out / "metrics.json"))
            if "markdown" in formats:
                generated["summary"] = MetricsMarkdownGenerator(summary).generate(str(out / "summary.md"))
    logger.info("Exported %s to %s", ", ".join(generated), out)
    return generated


def read_trajectory_csv(path: str) -> pd.DataFrame:
    """Load a trajectory export back into a frame."""
    if not Path(path).exists():
        raise FileNotFoundError(f"Trajectory file not found: {path}")
    return pd.read_csv(path)


@dataclass(frozen=True)
class FieldGridSpec:
    """Rectangular evaluation grid; values are laid out row-major in y."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    resolution: float

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValidationError("grid.resolution", "must be > 0")
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValidationError("grid", "ranges must be ordered")

    def axes(self):
        nx = int(round((self.x_max - self.x_min) / self.resolution)) + 1
        ny = int(round((self.y_max - self.y_min) / self.resolution)) + 1
        return self.x_min + self.resolution * np.arange(nx), self.y_min + self.resolution * np.arange(ny)


def field_grid(state: VehicleState, obstacles: Sequence[Obstacle],
               histories: Dict[str, HistoryBuffer], spec: FieldGridSpec,
               params: RiskFieldParams) -> pd.DataFrame:
    """
    Evolutionary and static field values over a grid at the current tick.

    Evolution factors come from the histories; an obstacle without one
    is seeded with its distance to ``state``.

    Returns:
        DataFrame with columns x, y, v_erpf, v_rpf, x varying fastest
    """
    xs, ys = spec.axes()
    gx, gy = np.meshgrid(xs, ys)
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    if not obstacles:
        zeros = np.zeros(len(cells))
        return pd.DataFrame({"x": cells[:, 0], "y": cells[:, 1], "v_erpf": zeros, "v_rpf": zeros})

    for obstacle in obstacles:
        if obstacle.id not in histories:
            histories[obstacle.id] = HistoryBuffer(params.n_history)
            histories[obstacle.id].push(distance(state, obstacle.p0))
    points = np.array([o.p0 for o in obstacles])
    gains = np.array([params.gain_for(o.id) for o in obstacles])
    etas = evolution_factors(obstacles, histories, params)
    obstacle_positions = np.broadcast_to(points, (len(cells), *points.shape))
    v_erpf, _ = evaluate_field(cells, obstacle_positions, etas * gains, params)
    v_rpf, _ = evaluate_field(cells, obstacle_positions, gains, params)
    return pd.DataFrame({"x": cells[:, 0], "y": cells[:, 1], "v_erpf": v_erpf, "v_rpf": v_rpf},
                        columns=FIELD_COLUMNS)


def dump_field(state: VehicleState, obstacles: Sequence[Obstacle],
               histories: Dict[str, HistoryBuffer], spec: FieldGridSpec,
               params: RiskFieldParams, output_path: str) -> str:
    """Write ``field_grid`` to CSV."""
    frame = field_grid(state, obstacles, histories, spec, params)
    Path(output_path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_path, index=False, float_format=FLOAT_FORMAT)
    return output_path


def write_sweep_csv(frame: pd.DataFrame, output_path: str) -> str:
    """Write an ellipse aspect-ratio sweep."""
    Path(output_path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output_path, index=False, float_format=FLOAT_FORMAT)
    return output_path


class BenchmarkMarkdownGenerator(ReportGenerator):
    """Comparison table of Monte Carlo summaries."""

    def to_string(self) -> str:
        summaries: Mapping[str, Dict[str, Any]] = self.payload["controllers"]
        lines = [
            f"# Benchmark {self.payload['scenario']}",
            "",
            "| Controller | Runs | Valid | Collisions (mean / max) | Avg speed (m/s) | Min distance (m) |",
            "|---|---|---|---|---|---|",
        ]
        for name, summary in summaries.items():
            collisions = summary["collision_count"]
            lines.append(
                f"| {name} | {summary['n_runs']} | {summary['n_valid']} "
                f"| {collisions['mean']:.2f} / {collisions['max']:.0f} "
                f"| {summary['avg_speed']['mean']:.2f} | {summary['min_distance']['min']:.2f} |"
            )
        lines.append("")
        return "\n".join(lines)


def write_benchmark(scenario: str, summaries: Mapping[str, MonteCarloSummary],
                    output_dir: str) -> Dict[str, str]:
    """
    Write a Monte Carlo comparison.

    Returns:
        Dictionary mapping export name to output path
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "scenario": scenario,
        "controllers": {name: summary.to_dict() for name, summary in summaries.items()},
    }
    frames: List[pd.DataFrame] = [s.runs.assign(controller=name) for name, s in summaries.items()]
    runs = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    runs_path = out / "bench_runs.csv"
    runs.to_csv(runs_path, index=False, float_format=FLOAT_FORMAT)
    return {
        "summary": MetricsJSONGenerator(payload).generate(str(out / "bench_summary.json")),
        "runs": str(runs_path),
        "markdown": BenchmarkMarkdownGenerator(payload).generate(str(out / "bench_summary.md")),
    }


__all__ = [
    "FLOAT_FORMAT",
    "ReportGenerator",
    "TrajectoryCSVGenerator",
    "DiagnosticsCSVGenerator",
    "MetricsJSONGenerator",
    "MetricsMarkdownGenerator",
    "BenchmarkMarkdownGenerator",
    "FieldGridSpec",
    "export_log",
    "run_directory",
    "run_summary",
    "read_trajectory_csv",
    "field_grid",
    "dump_field",
    "write_sweep_csv",
    "write_benchmark",
]
