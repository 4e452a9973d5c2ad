"""
Closed-loop simulation harness.

Runs one controller against one scenario, records every tick, detects
collisions, aggregates metrics and fans seeded runs out to worker
processes for Monte Carlo comparisons.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from erpfmpc.controllers import Controller, build_controller
from erpfmpc.dynamics import ControlInput, VehicleState, step
from erpfmpc.exceptions import NonFiniteError, ValidationError
from erpfmpc.flops import FlopCounter
from erpfmpc.mpc_solver import PlannerConfig, StepDiagnostics
from erpfmpc.risk_field import Obstacle
from erpfmpc.scenarios import Scenario, UncertaintyModel
from erpfmpc.utils.config import build_planner_config

logger = logging.getLogger(__name__)

DEFAULT_COLLISION_THRESHOLD = 2.0
LANE_TOLERANCE = 0.2


@dataclass(frozen=True)
class HarnessSettings:
    collision_threshold: float = DEFAULT_COLLISION_THRESHOLD
    count_flops: bool = True

    def __post_init__(self):
        if not self.collision_threshold > 0:
            raise ValidationError("harness.collision_threshold", "must be > 0")

    @classmethod
    def from_overrides(cls, overrides: Optional[Mapping[str, Any]]) -> "HarnessSettings":
        return cls(**dict((overrides or {}).get("harness", {})))


def obstacle_trajectories(obstacles: Sequence[Obstacle], n_steps: int, dt: float,
                          accelerations: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Positions and velocities of every obstacle over a run.

    Without accelerations the obstacles move at constant velocity. With
    them, the longitudinal velocity is perturbed at each step before the
    position is integrated.

    Args:
        obstacles: Obstacles at step 0
        n_steps: Number of steps to propagate
        dt: Sampling period (s)
        accelerations: Optional longitudinal accelerations, shape (n_steps, M)

    Returns:
        Tuple of positions and velocities, both shape (n_steps+1, M, 2);
        the velocity at step k is the one that carried the obstacle there
    """
    M = len(obstacles)
    if M == 0:
        return np.zeros((n_steps + 1, 0, 2)), np.zeros((n_steps + 1, 0, 2))
    p0 = np.array([o.p0 for o in obstacles])
    vel = np.array([o.vel for o in obstacles])
    times = np.arange(n_steps + 1, dtype=float) * dt
    positions = p0[None, :, :] + vel[None, :, :] * times[:, None, None]
    velocities = np.repeat(vel[None, :, :], n_steps + 1, axis=0)
    if accelerations is None:
        return positions, velocities

    accelerations = np.asarray(accelerations, dtype=float)
    if accelerations.shape != (n_steps, M):
        raise ValidationError("accelerations", f"expected shape {(n_steps, M)}")
    dv = dt * np.cumsum(accelerations, axis=0)
    drift = np.zeros((n_steps + 1, M))
    drift[1:] = dt * np.cumsum(dv, axis=0)
    positions[:, :, 0] += drift
    velocities[1:, :, 0] += dv
    return positions, velocities


def propagate_obstacles(obstacles: Sequence[Obstacle], k: int, dt: float,
                        noise: Optional[UncertaintyModel] = None, seed: int = 0) -> np.ndarray:
    """Obstacle positions after k steps, shape (M, 2)."""
    if k < 0:
        raise ValidationError("k", "must be >= 0")
    accelerations = noise.sample(seed, k, len(obstacles)) if noise is not None else None
    positions, _ = obstacle_trajectories(obstacles, k, dt, accelerations)
    return positions[k]


def _track_velocities(track: np.ndarray, dt: float) -> np.ndarray:
    velocities = np.empty_like(track)
    velocities[1:] = np.diff(track, axis=0) / dt
    velocities[0] = velocities[1] if len(track) > 1 else 0.0
    return velocities


def scenario_trajectories(scenario: Scenario, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Obstacle positions and velocities for a whole run of the scenario."""
    if scenario.tracks is not None:
        positions = np.stack([scenario.tracks[o.id] for o in scenario.obstacles], axis=1) \
            if scenario.obstacles else np.zeros((scenario.n_steps + 1, 0, 2))
        velocities = np.stack([_track_velocities(scenario.tracks[o.id], scenario.dt)
                               for o in scenario.obstacles], axis=1) \
            if scenario.obstacles else np.zeros_like(positions)
        return positions, velocities
    accelerations = None
    if scenario.uncertainty is not None:
        accelerations = scenario.uncertainty.sample(seed, scenario.n_steps, len(scenario.obstacles))
    return obstacle_trajectories(scenario.obstacles, scenario.n_steps, scenario.dt, accelerations)


@dataclass(eq=False)
class SimulationLog:
    """Per-tick record of one closed-loop run."""

    scenario: str
    controller: str
    seed: int
    obstacle_ids: List[str]
    dt: float
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    y_refs: List[float] = field(default_factory=list)
    distances: List[np.ndarray] = field(default_factory=list)
    v_erpf: List[float] = field(default_factory=list)
    etas: List[np.ndarray] = field(default_factory=list)
    ellipse_weights: List[np.ndarray] = field(default_factory=list)
    diagnostics: List[Dict[str, Any]] = field(default_factory=list)
    alerts: List[Tuple[float, str]] = field(default_factory=list)
    flops: Dict[str, float] = field(default_factory=dict)
    final_state: Optional[VehicleState] = None
    failure: Optional[str] = None

    def append(self, t: float, state: VehicleState, u: ControlInput, y_ref: float,
               diagnostics: StepDiagnostics, tick_flops: int = 0) -> None:
        self.times.append(t)
        self.states.append(state.as_array())
        self.controls.append(u.as_array())
        self.y_refs.append(float(y_ref))
        self.distances.append(np.array(diagnostics.distances, dtype=float))
        self.v_erpf.append(diagnostics.v_erpf)
        self.etas.append(np.array(diagnostics.etas, dtype=float))
        self.ellipse_weights.append(np.array(diagnostics.ellipse_weights, dtype=float))
        record = diagnostics.to_record()
        record["t"] = t
        record["flops"] = tick_flops
        self.diagnostics.append(record)
        self.alerts.extend((t, obstacle_id) for obstacle_id in diagnostics.alerts)

    @property
    def n_steps(self) -> int:
        return len(self.times)

    @property
    def valid(self) -> bool:
        return self.failure is None

    def state_array(self) -> np.ndarray:
        return np.array(self.states, dtype=float).reshape(self.n_steps, 3)

    def control_array(self) -> np.ndarray:
        return np.array(self.controls, dtype=float).reshape(self.n_steps, 2)

    def distance_array(self) -> np.ndarray:
        return np.array(self.distances, dtype=float).reshape(self.n_steps, len(self.obstacle_ids))

    def eta_array(self) -> np.ndarray:
        return np.array(self.etas, dtype=float).reshape(self.n_steps, len(self.obstacle_ids))

    def ellipse_weight_array(self) -> np.ndarray:
        return np.array(self.ellipse_weights, dtype=float).reshape(self.n_steps, len(self.obstacle_ids))

    def trajectory_columns(self) -> List[str]:
        return (["t", "x", "y", "v", "a_cmd", "vy_cmd"]
                + [f"d_{obstacle_id}" for obstacle_id in self.obstacle_ids]
                + ["V_erpf"]
                + [f"eta_{obstacle_id}" for obstacle_id in self.obstacle_ids])

    def to_frame(self) -> pd.DataFrame:
        """Trajectory table in the exported column order."""
        data = np.column_stack([
            np.array(self.times, dtype=float).reshape(-1, 1),
            self.state_array(),
            self.control_array(),
            self.distance_array(),
            np.array(self.v_erpf, dtype=float).reshape(-1, 1),
            self.eta_array(),
        ])
        return pd.DataFrame(data, columns=self.trajectory_columns())

    def diagnostics_frame(self) -> pd.DataFrame:
        columns = ["t", "k", "iterations", "cost", "grad_norm", "converged",
                   "active_constraints", "cbf_fallback", "flops"]
        return pd.DataFrame(self.diagnostics, columns=columns)


class Simulation:
    """
    Closed loop of one controller in one scenario.

    At every tick the controller sees obstacle snapshots (current
    position and velocity) and a reference window anchored at the ego;
    the first planned input is applied to the ego point mass.
    """

    def __init__(self, scenario: Scenario, controller: Controller, seed: int = 0,
                 settings: Optional[HarnessSettings] = None):
        self.scenario = scenario
        self.controller = controller
        self.seed = seed
        self.settings = settings or HarnessSettings()
        self.positions, self.velocities = scenario_trajectories(scenario, seed)

    def snapshots(self, k: int) -> List[Obstacle]:
        return [
            Obstacle(o.id, tuple(self.positions[k, i]), tuple(self.velocities[k, i]), o.width)
            for i, o in enumerate(self.scenario.obstacles)
        ]

    def run(self) -> SimulationLog:
        scenario = self.scenario
        config = self.controller.config
        model = config.model
        flops = FlopCounter(enabled=self.settings.count_flops)
        log = SimulationLog(
            scenario=scenario.name,
            controller=self.controller.get_name(),
            seed=self.seed,
            obstacle_ids=[o.id for o in scenario.obstacles],
            dt=scenario.dt,
        )

        self.controller.reset()
        state = scenario.ego
        started = time.perf_counter()
        for k in range(scenario.n_steps):
            t = k * scenario.dt
            reference = scenario.reference.window(state, t, config.horizon, scenario.dt)
            flops.start_tick()
            try:
                u, diagnostics = self.controller.compute_control(state, k, reference,
                                                                 self.snapshots(k), flops)
            except NonFiniteError as e:
                log.failure = f"tick {k} (t={t:.2f} s): {e}"
                logger.error("%s/%s seed %d aborted at %s", scenario.name, log.controller,
                             self.seed, log.failure)
                break
            tick_flops = flops.end_tick()
            log.append(t, state, u, reference.states[0, 1], diagnostics, tick_flops)
            state = step(state, u, model)

        log.final_state = state
        log.flops = flops.summary()
        logger.info("%s/%s seed %d: %d ticks in %.2f s", scenario.name, log.controller,
                    self.seed, log.n_steps, time.perf_counter() - started)
        return log


def scenario_planner_config(scenario: Scenario, config: Optional[PlannerConfig] = None) -> PlannerConfig:
    """
    Planner configuration for a scenario.

    The scenario's required sections apply when no configuration is
    given. The sampling period and the lateral state box always come from
    the scenario.
    """
    if config is None:
        config = build_planner_config(scenario.planner_overrides)
    y_lo, y_hi = scenario.lanes.ego_bounds()
    return replace(config, dt=scenario.dt, bounds=replace(config.bounds, y_lo=y_lo, y_hi=y_hi))


def run_scenario(scenario: Scenario, controller: str, seed: int = 0,
                 config: Optional[PlannerConfig] = None,
                 settings: Optional[HarnessSettings] = None) -> SimulationLog:
    """
    Run one controller through one scenario.

    Deterministic for a fixed (scenario, controller, seed). A solver
    failure truncates the log and records the failure.
    """
    agent = build_controller(controller, scenario_planner_config(scenario, config))
    return Simulation(scenario, agent, seed, settings).run()


@dataclass(frozen=True)
class CollisionEvent:
    """One contiguous interval below the collision threshold."""

    start: float
    end: float
    obstacle_ids: Tuple[str, ...]
    min_distance: float


def collision_intervals(min_distances: np.ndarray, threshold: float) -> List[Tuple[int, int]]:
    """Inclusive index ranges where the distance stays below threshold."""
    below = np.concatenate([[False], np.asarray(min_distances) < threshold, [False]])
    edges = np.flatnonzero(np.diff(below.astype(int)))
    return [(int(start), int(stop) - 1) for start, stop in zip(edges[::2], edges[1::2])]


def detect_collision(log: SimulationLog,
                     threshold: float = DEFAULT_COLLISION_THRESHOLD) -> List[CollisionEvent]:
    """
    One event per contiguous interval where any center distance drops
    below the threshold.
    """
    if not threshold > 0:
        raise ValidationError("threshold", "must be > 0")
    distances = log.distance_array()
    if distances.size == 0:
        return []
    closest = distances.min(axis=1)
    events = []
    for start, stop in collision_intervals(closest, threshold):
        window = distances[start:stop + 1]
        involved = tuple(
            obstacle_id for i, obstacle_id in enumerate(log.obstacle_ids)
            if np.any(window[:, i] < threshold)
        )
        events.append(CollisionEvent(
            start=log.times[start],
            end=log.times[stop],
            obstacle_ids=involved,
            min_distance=float(window.min()),
        ))
    return events


@dataclass
class Metrics:
    """
    Aggregates of one run.

    ``lane_change_time`` is measured from the start of the scheduled lane
    change until the ego first comes within 0.2 m of the target lane;
    ``None`` for lane keeping or when the target is never reached.
    """

    collision_count: int
    min_distance: float
    avg_speed: float
    max_du: float
    lane_change_time: Optional[float]
    flops_total: float
    flops_per_step: float
    n_steps: int
    valid: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _lane_change_time(log: SimulationLog, scenario: Optional[Scenario]) -> Optional[float]:
    if scenario is None or scenario.reference.kind == "lane_keep":
        return None
    reference = scenario.reference
    times = np.array(log.times)
    y = log.state_array()[:, 1]
    reached = np.flatnonzero((times >= reference.t_start)
                             & (np.abs(y - reference.y_target) <= LANE_TOLERANCE))
    if reached.size == 0:
        return None
    return float(times[reached[0]] - reference.t_start)


def compute_metrics(log: SimulationLog, threshold: float = DEFAULT_COLLISION_THRESHOLD,
                    scenario: Optional[Scenario] = None) -> Metrics:
    """
    Aggregate a run.

    Raises:
        ValidationError: If the log is empty
    """
    if log.n_steps == 0:
        raise ValidationError("log", "no ticks recorded")
    distances = log.distance_array()
    controls = log.control_array()
    du = np.linalg.norm(np.diff(controls, axis=0), axis=1) if len(controls) > 1 else np.zeros(1)
    return Metrics(
        collision_count=len(detect_collision(log, threshold)),
        min_distance=float(distances.min()) if distances.size else float("inf"),
        avg_speed=float(np.mean(log.state_array()[:, 2])),
        max_du=float(du.max()),
        lane_change_time=_lane_change_time(log, scenario),
        flops_total=float(log.flops.get("flops_total", 0)),
        flops_per_step=float(log.flops.get("flops_per_step", 0.0)),
        n_steps=log.n_steps,
        valid=log.valid,
    )


@dataclass
class MonteCarloSummary:
    """Per-run metrics of one controller over a seeded suite."""

    controller: str
    runs: pd.DataFrame
    invalid_seeds: List[int] = field(default_factory=list)

    @property
    def n_valid(self) -> int:
        return len(self.runs)

    def stat(self, column: str) -> Dict[str, float]:
        values = self.runs[column]
        if values.empty:
            return {"mean": float("nan"), "min": float("nan"), "max": float("nan")}
        return {"mean": float(values.mean()), "min": float(values.min()), "max": float(values.max())}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "controller": self.controller,
            "n_runs": self.n_valid + len(self.invalid_seeds),
            "n_valid": self.n_valid,
            "invalid_seeds": list(self.invalid_seeds),
            "collision_count": self.stat("collision_count"),
            "avg_speed": self.stat("avg_speed"),
            "min_distance": self.stat("min_distance"),
        }


def _run_one(job: Tuple[Scenario, str, int, Optional[PlannerConfig], HarnessSettings]) -> Tuple[str, int, Metrics]:
    scenario, controller, seed, config, settings = job
    log = run_scenario(scenario, controller, seed, config, settings)
    if log.n_steps == 0:
        # aborted on the first tick
        return controller, seed, Metrics(0, float("nan"), float("nan"), float("nan"), None,
                                         0.0, 0.0, 0, valid=False)
    return controller, seed, compute_metrics(log, settings.collision_threshold, scenario)


def monte_carlo(scenario: Scenario, controllers: Sequence[str], n_runs: int,
                seeds: Optional[Sequence[int]] = None, workers: int = 1,
                config: Optional[PlannerConfig] = None,
                settings: Optional[HarnessSettings] = None) -> Dict[str, MonteCarloSummary]:
    """
    Seeded runs of several controllers on one scenario.

    Each run owns its full state, so runs are spread over ``workers``
    processes and joined in seed order. Runs aborted by a solver failure
    are excluded from the statistics and listed per controller.

    Returns:
        Summary per controller name, in the order given
    """
    if n_runs < 1:
        raise ValidationError("n_runs", "must be >= 1")
    seeds = list(range(n_runs)) if seeds is None else list(seeds)[:n_runs]
    if len(seeds) < n_runs:
        raise ValidationError("seeds", f"need {n_runs} seeds, got {len(seeds)}")
    settings = settings or HarnessSettings()
    jobs = [(scenario, name, seed, config, settings) for name in controllers for seed in seeds]
    logger.info("Monte Carlo: %d runs of %s on %s with %d workers",
                len(jobs), ", ".join(controllers), scenario.name, workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    summaries = {}
    for name in controllers:
        rows, invalid = [], []
        for controller, seed, metrics in sorted(results, key=lambda r: r[1]):
            if controller != name:
                continue
            if metrics.valid:
                rows.append({"seed": seed, **metrics.to_dict()})
            else:
                invalid.append(seed)
        if invalid:
            logger.warning("%s: %d invalid runs (seeds %s)", name, len(invalid), invalid)
        summaries[name] = MonteCarloSummary(
            controller=name,
            runs=pd.DataFrame(rows, columns=["seed", *Metrics.__dataclass_fields__]),
            invalid_seeds=invalid,
        )
    return summaries
