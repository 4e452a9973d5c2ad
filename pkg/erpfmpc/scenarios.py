"""
Scenario library: lane geometry, reference schedules, HDV uncertainty and
the named presets, plus ingestion of recorded trajectories for replay.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from erpfmpc.dynamics import DEFAULT_DT, ReferenceTrajectory, VehicleState
from erpfmpc.exceptions import ConfigError, ValidationError
from erpfmpc.risk_field import Obstacle

logger = logging.getLogger(__name__)

REFERENCE_KINDS = ("lane_keep", "lane_change", "overtake")
OVERTAKE_SIDES = ("upper", "lower")
REPLAY_COLUMNS = ["t", "vehicle_id", "x", "y"]


@dataclass(frozen=True)
class LaneGeometry:
    """Straight road with parallel lanes."""

    centers: Tuple[float, ...] = (1.75, 5.25)
    lane_width: float = 3.5
    band: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        centers = tuple(float(c) for c in self.centers)
        if not centers:
            raise ValidationError("lanes.centers", "at least one lane is required")
        if not self.lane_width > 0:
            raise ValidationError("lanes.lane_width", "must be > 0")
        band = self.band
        if band is None:
            half = self.lane_width / 2.0
            band = (min(centers) - half, max(centers) + half)
        band = (float(band[0]), float(band[1]))
        if not band[0] < band[1]:
            raise ValidationError("lanes.band", "lower edge must be below upper edge")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "band", band)

    def ego_bounds(self, margin: float = 0.5) -> Tuple[float, float]:
        """Admissible range of the ego center inside the band."""
        return self.band[0] + margin, self.band[1] - margin

    def adjacent(self, y: float, side: str) -> float:
        """
        Center of the lane next to the one nearest to y.

        Raises:
            ValidationError: If there is no lane on that side
        """
        if side not in OVERTAKE_SIDES:
            raise ValidationError("reference.side", f"must be one of {OVERTAKE_SIDES}")
        centers = sorted(self.centers)
        lane = int(np.argmin([abs(c - y) for c in centers]))
        target = lane + 1 if side == "upper" else lane - 1
        if not 0 <= target < len(centers):
            raise ValidationError("reference.side", f"no lane {side} of y={y:g}")
        return centers[target]


def _ramp(t: np.ndarray, start: float, duration: float) -> np.ndarray:
    return np.clip((t - start) / duration, 0.0, 1.0)


@dataclass(frozen=True)
class ReferenceSpec:
    """
    Time-indexed lateral schedule at constant reference speed.

    ``lane_change`` moves linearly from ``y_start`` to ``y_target`` over
    ``[t_start, t_start + t_duration]``. ``overtake`` does the same and
    returns to ``y_start`` over ``[t_return, t_return + t_return_duration]``
    (``t_duration`` when unset). Instead of ``y_target`` a manoeuvre may name
    the ``side`` (``upper`` or ``lower``); the scenario resolves it to the
    adjacent lane center.
    """

    kind: str = "lane_keep"
    v_ref: float = 30.0
    y_start: float = 1.75
    y_target: Optional[float] = None
    t_start: float = 0.0
    t_duration: float = 2.0
    t_return: Optional[float] = None
    t_return_duration: Optional[float] = None
    side: Optional[str] = None

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ValidationError("reference.kind", f"must be one of {REFERENCE_KINDS}")
        if not self.v_ref >= 0:
            raise ValidationError("reference.v_ref", "must be >= 0")
        if not self.t_duration > 0:
            raise ValidationError("reference.t_duration", "must be > 0")
        if self.side is not None and self.side not in OVERTAKE_SIDES:
            raise ValidationError("reference.side", f"must be one of {OVERTAKE_SIDES}")
        if self.kind != "lane_keep" and self.y_target is None and self.side is None:
            raise ValidationError("reference.y_target", f"y_target or side required for {self.kind}")
        if self.kind == "overtake":
            if self.t_return is None or self.t_return < self.t_start + self.t_duration:
                raise ValidationError("reference.t_return", "must follow the outbound lane change")

    def resolve(self, lanes: LaneGeometry) -> "ReferenceSpec":
        """
        Fix ``y_target`` from ``side`` against a lane geometry.

        Raises:
            ValidationError: If there is no such lane or it contradicts ``y_target``
        """
        if self.side is None or self.kind == "lane_keep":
            return self
        target = lanes.adjacent(self.y_start, self.side)
        if self.y_target is not None and not math.isclose(self.y_target, target):
            raise ValidationError("reference.side",
                                  f"y_target {self.y_target:g} is not the {self.side} lane ({target:g})")
        return replace(self, y_target=target)

    @property
    def final_lateral(self) -> float:
        """Lane the schedule ends in."""
        if self.kind == "lane_change":
            return float(self.y_target)
        return float(self.y_start)

    def lateral(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "lane_keep":
            return np.full(t.shape, float(self.y_start))
        if self.y_target is None:
            raise ValidationError("reference.y_target", f"side '{self.side}' not resolved against a lane geometry")
        shift = self.y_target - self.y_start
        progress = _ramp(t, self.t_start, self.t_duration)
        if self.kind == "overtake":
            back = self.t_return_duration or self.t_duration
            progress = progress - _ramp(t, self.t_return, back)
        return self.y_start + progress * shift

    def window(self, state: VehicleState, t: float, N: int, dt: float) -> ReferenceTrajectory:
        """Reference for the horizon starting at time t, anchored at the ego x."""
        k = np.arange(N + 1, dtype=float)
        x = state.x + self.v_ref * k * dt
        y = self.lateral(t + k * dt)
        v = np.full(N + 1, float(self.v_ref))
        return ReferenceTrajectory(np.column_stack([x, y, v]))


@dataclass(frozen=True)
class UncertaintyModel:
    """
    Bounded zero-mean HDV acceleration noise.

    Accelerations are drawn uniformly from ``[-bound, bound]`` per step and
    per obstacle from a counter-based generator keyed by the seed.
    """

    bound: float = 1.5

    def __post_init__(self):
        if not (np.isfinite(self.bound) and self.bound >= 0):
            raise ValidationError("uncertainty.bound", "must be finite and >= 0")

    def sample(self, seed: int, n_steps: int, n_obstacles: int) -> np.ndarray:
        """Longitudinal accelerations, shape (n_steps, n_obstacles)."""
        if self.bound == 0:
            return np.zeros((n_steps, n_obstacles))
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        return rng.uniform(-self.bound, self.bound, size=(n_steps, n_obstacles))


@dataclass(frozen=True, eq=False)
class Scenario:
    """
    A closed-loop experiment definition.

    Attributes:
        name: Preset or file name
        ego: Initial ego state
        obstacles: HDVs at t = 0
        lanes: Road geometry
        reference: Lateral schedule and reference speed
        duration: Simulated time (s)
        dt: Sampling period (s)
        uncertainty: Optional HDV noise model
        tracks: Recorded positions per obstacle id, shape (n_steps+1, 2),
            replacing constant-velocity propagation
        planner_overrides: Planner config sections the scenario requires
        description: One-line summary
    """

    name: str
    ego: VehicleState
    obstacles: Tuple[Obstacle, ...]
    lanes: LaneGeometry
    reference: ReferenceSpec
    duration: float
    dt: float = DEFAULT_DT
    uncertainty: Optional[UncertaintyModel] = None
    tracks: Optional[Mapping[str, np.ndarray]] = None
    planner_overrides: Mapping[str, Any] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "reference", self.reference.resolve(self.lanes))
        if not (self.dt > 0 and self.duration > 0):
            raise ValidationError("scenario.duration", "duration and dt must be > 0")
        ratio = self.duration / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError("scenario.duration", "must be an integer multiple of dt")
        ids = [o.id for o in self.obstacles]
        if len(set(ids)) != len(ids):
            raise ValidationError("scenario.obstacles", "obstacle ids must be unique")
        lo, hi = self.lanes.band
        for obstacle in self.obstacles:
            if not lo <= obstacle.p0[1] <= hi:
                raise ValidationError(f"obstacle.{obstacle.id}.p0", "must start inside the drivable band")
        if self.tracks is not None:
            for obstacle in self.obstacles:
                track = self.tracks.get(obstacle.id)
                if track is None or np.shape(track) != (self.n_steps + 1, 2):
                    raise ValidationError(f"tracks.{obstacle.id}", "missing or wrong length")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def scenario1() -> Scenario:
    return Scenario(
        name="scenario1",
        ego=VehicleState(0.0, 1.75, 30.0),
        obstacles=(
            Obstacle("HDV1", (50.0, 1.75), (12.0, 0.0)),
            Obstacle("HDV2", (40.0, 5.25), (20.0, 0.0)),
        ),
        lanes=LaneGeometry(centers=(1.75, 5.25)),
        reference=ReferenceSpec(kind="lane_change", v_ref=30.0, y_start=1.75, y_target=5.25,
                                t_start=1.5, t_duration=2.0),
        duration=8.0,
        description="Lane change from lane 1 to lane 2 between a slow leader and a faster HDV",
    )


def scenario2() -> Scenario:
    return Scenario(
        name="scenario2",
        ego=VehicleState(0.0, 1.75, 35.0),
        obstacles=(
            Obstacle("HDV1", (50.0, 1.75), (15.0, 0.0)),
            Obstacle("HDV2", (80.0, 1.75), (15.0, 0.0)),
            Obstacle("HDV3", (40.0, 5.25), (30.0, 0.0)),
            Obstacle("HDV4", (100.0, 5.25), (15.0, 0.0)),
        ),
        lanes=LaneGeometry(centers=(1.75, 5.25)),
        reference=ReferenceSpec(kind="overtake", v_ref=35.0, y_start=1.75, y_target=5.25,
                                t_start=0.5, t_duration=1.5, t_return=4.6, t_return_duration=1.0),
        duration=10.0,
        uncertainty=UncertaintyModel(bound=1.5),
        description="Overtake two slow HDVs through the outer lane under HDV acceleration noise",
    )


def adaptive_ef() -> Scenario:
    return Scenario(
        name="adaptive_ef",
        ego=VehicleState(5.0, 1.75, 45.0),
        obstacles=(
            Obstacle("HDV1", (55.0, 1.75), (15.0, 0.0)),
            Obstacle("HDV2", (45.0, 5.25), (30.0, 0.0)),
            Obstacle("HDV3", (85.0, 1.75), (15.0, 0.0)),
        ),
        lanes=LaneGeometry(centers=(1.75, 5.25)),
        reference=ReferenceSpec(kind="lane_keep", v_ref=45.0, y_start=1.75),
        duration=6.0,
        uncertainty=UncertaintyModel(bound=1.5),
        planner_overrides={"ellipse": {"enabled": True}},
        description="Fast ego among three HDVs with ellipse-weighted risk and EF alerts",
    )


def highway() -> Scenario:
    return Scenario(
        name="highway",
        ego=VehicleState(0.0, 5.25, 30.0),
        obstacles=(
            Obstacle("V2", (45.0, 5.25), (28.0, 0.0)),
            Obstacle("V3", (40.0, 1.75), (27.0, 0.0)),
            Obstacle("V4", (-35.0, 5.25), (30.0, 0.0)),
            Obstacle("V5", (-15.0, 8.75), (32.0, 0.0)),
            Obstacle("V6", (55.0, 8.75), (26.0, 0.0)),
        ),
        lanes=LaneGeometry(centers=(1.75, 5.25, 8.75)),
        reference=ReferenceSpec(kind="lane_keep", v_ref=30.0, y_start=5.25),
        duration=10.0,
        description="Three-lane highway, ego in the middle lane among five HDVs",
    )


def _three_lane_overtake(side: str) -> Scenario:
    return Scenario(
        name=f"overtake_{side}",
        ego=VehicleState(0.0, 5.25, 35.0),
        obstacles=(
            Obstacle("HDV1", (50.0, 5.25), (15.0, 0.0)),
            Obstacle("HDV2", (80.0, 5.25), (15.0, 0.0)),
            Obstacle("HDV3", (40.0, 1.75), (30.0, 0.0)),
            Obstacle("HDV4", (40.0, 8.75), (30.0, 0.0)),
        ),
        lanes=LaneGeometry(centers=(1.75, 5.25, 8.75)),
        reference=ReferenceSpec(kind="overtake", v_ref=35.0, y_start=5.25, side=side,
                                t_start=0.5, t_duration=1.5, t_return=4.6, t_return_duration=1.0),
        duration=10.0,
        uncertainty=UncertaintyModel(bound=1.5),
        description=f"Overtake two slow HDVs in the middle lane through the {side} lane",
    )


def overtake_upper() -> Scenario:
    return _three_lane_overtake("upper")


def overtake_lower() -> Scenario:
    return _three_lane_overtake("lower")


PRESETS: Dict[str, Callable[[], Scenario]] = {
    "scenario1": scenario1,
    "scenario2": scenario2,
    "adaptive_ef": adaptive_ef,
    "highway": highway,
    "overtake_upper": overtake_upper,
    "overtake_lower": overtake_lower,
}


def list_scenarios() -> List[str]:
    return list(PRESETS)


def get_scenario(name: str) -> Scenario:
    """
    Build a named preset.

    Raises:
        ValidationError: If the name is unknown
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValidationError("scenario", f"unknown preset '{name}' (known: {', '.join(PRESETS)})") from None


def scenario_from_dict(data: Mapping[str, Any], name: str = "custom") -> Scenario:
    """
    Build a scenario from a parsed YAML mapping.

    Expected keys: ego [x, y, v], obstacles (list of id/p0/vel/width),
    lanes (centers, lane_width, band), reference (ReferenceSpec fields),
    duration, dt, uncertainty (bound), description.
    """
    known = {"name", "ego", "obstacles", "lanes", "reference", "duration", "dt",
             "uncertainty", "planner_overrides", "description"}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"scenario.{sorted(unknown)[0]}", "unknown key")
    try:
        ego = VehicleState(*[float(v) for v in data["ego"]])
        obstacles = tuple(
            Obstacle(str(item["id"]), tuple(item["p0"]), tuple(item["vel"]), float(item.get("width", 2.0)))
            for item in data.get("obstacles", [])
        )
        lanes = LaneGeometry(**data.get("lanes", {}))
        reference = ReferenceSpec(**data.get("reference", {}))
        uncertainty = data.get("uncertainty")
        return Scenario(
            name=str(data.get("name", name)),
            ego=ego,
            obstacles=obstacles,
            lanes=lanes,
            reference=reference,
            duration=float(data["duration"]),
            dt=float(data.get("dt", DEFAULT_DT)),
            uncertainty=UncertaintyModel(**uncertainty) if uncertainty else None,
            planner_overrides=dict(data.get("planner_overrides", {})),
            description=str(data.get("description", "")),
        )
    except (KeyError, TypeError) as e:
        raise ValidationError("scenario", f"malformed scenario definition: {e}") from e


def load_scenario(name_or_path: str) -> Scenario:
    """Resolve a preset name or a path to a scenario YAML file."""
    if name_or_path in PRESETS:
        return get_scenario(name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise ValidationError("scenario", f"'{name_or_path}' is neither a preset nor a file")
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"Invalid scenario file {path}: {getattr(e, 'problem', e)}",
                          mark.line + 1 if mark else None, mark.column + 1 if mark else None) from e
    return scenario_from_dict(data, name=path.stem)


def load_replay_csv(csv_path: str, dt: float = DEFAULT_DT) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Load recorded trajectories and resample them to the planner period.

    Args:
        csv_path: CSV with columns t, vehicle_id, x, y
        dt: Resampling period (s)

    Returns:
        Tuple of the time grid and a dict mapping vehicle id to an
        (n, 2) array of positions; tracks hold their end values outside
        their recorded span

    Raises:
        FileNotFoundError: If the file does not exist
        ValidationError: If columns are missing or a track is unusable
    """
    path = Path(csv_path)
    if not path.exists():
        raise FileNotFoundError(f"Replay file not found: {csv_path}")

    frame = pd.read_csv(path)
    missing = [col for col in REPLAY_COLUMNS if col not in frame.columns]
    if missing:
        raise ValidationError("replay.columns", f"missing required fields: {missing}")
    frame = frame.astype({"vehicle_id": str})
    for col in ("t", "x", "y"):
        frame[col] = pd.to_numeric(frame[col], errors="coerce")
    if frame[["t", "x", "y"]].isna().any().any():
        raise ValidationError("replay.values", "t, x and y must be numeric")

    t0, t_end = float(frame["t"].min()), float(frame["t"].max())
    n = int(math.floor((t_end - t0) / dt + 1e-9))
    if n < 1:
        raise ValidationError("replay.t", "recording shorter than one sampling period")
    grid = t0 + dt * np.arange(n + 1)

    tracks: Dict[str, np.ndarray] = {}
    for vehicle_id, group in frame.groupby("vehicle_id", sort=True):
        group = group.sort_values("t")
        if len(group) < 2 or group["t"].duplicated().any():
            raise ValidationError(f"replay.{vehicle_id}", "needs >= 2 samples with distinct times")
        t = group["t"].to_numpy()
        tracks[vehicle_id] = np.column_stack([
            np.interp(grid, t, group["x"].to_numpy()),
            np.interp(grid, t, group["y"].to_numpy()),
        ])
    logger.info("Loaded %d replay tracks over %.2f s from %s", len(tracks), grid[-1] - grid[0], path)
    return grid, tracks


def replay_scenario(base: Scenario, csv_path: str) -> Scenario:
    """
    Replace a scenario's HDVs by recorded tracks.

    The ego, lanes and reference come from ``base``; the duration is cut
    to the recording when shorter.
    """
    grid, tracks = load_replay_csv(csv_path, base.dt)
    n_steps = min(base.n_steps, len(grid) - 1)
    obstacles = []
    clipped = {}
    for vehicle_id, track in tracks.items():
        track = track[:n_steps + 1]
        velocity = (track[1] - track[0]) / base.dt
        obstacles.append(Obstacle(vehicle_id, tuple(track[0]), tuple(velocity)))
        clipped[vehicle_id] = track
    lo, hi = base.lanes.band
    lanes = base.lanes
    y_all = np.concatenate([track[:, 1] for track in clipped.values()])
    if y_all.min() < lo or y_all.max() > hi:
        lanes = replace(base.lanes, band=(min(lo, float(y_all.min())), max(hi, float(y_all.max()))))
    return replace(
        base,
        name=f"{base.name}_replay",
        obstacles=tuple(obstacles),
        lanes=lanes,
        duration=n_steps * base.dt,
        uncertainty=None,
        tracks=clipped,
        description=f"{base.description} (replay of {Path(csv_path).name})",
    )
