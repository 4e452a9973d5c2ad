"""
Risk potential fields.

The classical repulsive field ``phi(d)`` is amplified per obstacle by an
evolution factor computed from the obstacle's recent distance history.
An obstacle whose mean recent distance exceeds its current distance is
approaching, and its field grows towards ``1 + lam`` times the static one.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from erpfmpc.dynamics import DEFAULT_DT, VehicleState
from erpfmpc.exceptions import ValidationError

logger = logging.getLogger(__name__)

EVOLUTION_MODES = ("sigmoid", "binary", "none")


@dataclass(frozen=True)
class Obstacle:
    """
    Constant-velocity agent.

    Attributes:
        id: Identifier used in logs and exports
        p0: Position at the reference tick (m, m)
        vel: Velocity vector (m/s, m/s)
        width: Vehicle width w_obs (m)
    """

    id: str
    p0: Tuple[float, float]
    vel: Tuple[float, float]
    width: float = 2.0

    def __post_init__(self):
        p0 = tuple(float(value) for value in self.p0)
        vel = tuple(float(value) for value in self.vel)
        if len(p0) != 2 or len(vel) != 2:
            raise ValidationError(f"obstacle.{self.id}", "p0 and vel must be 2-vectors")
        if not np.all(np.isfinite(p0 + vel)):
            raise ValidationError(f"obstacle.{self.id}", "position and velocity must be finite")
        if not self.width > 0:
            raise ValidationError(f"obstacle.{self.id}.width", "must be > 0")
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "vel", vel)

    def position_at(self, k: int, dt: float = DEFAULT_DT) -> np.ndarray:
        """Constant-velocity position after k steps."""
        return np.asarray(self.p0) + np.asarray(self.vel) * (k * dt)


@dataclass(frozen=True)
class RiskFieldParams:
    """
    Tunables of the risk field.

    ``lam = 0`` is accepted and degenerates the evolutionary field to the
    static one. The risk weight of the MPC cost lives in ``MPCWeights``.
    """

    d_safe: float = 10.0
    epsilon: float = 0.1
    lam: float = 8.0
    n_history: int = 10
    alpha: float = 1.0
    alpha_by_id: Mapping[str, float] = field(default_factory=dict)
    evolution: str = "sigmoid"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("risk_field.epsilon", "must be > 0")
        if not self.d_safe > self.epsilon:
            raise ValidationError("risk_field.d_safe", "must be > epsilon")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError("risk_field.lam", "must be finite and >= 0")
        if int(self.n_history) != self.n_history or self.n_history < 1:
            raise ValidationError("risk_field.n_history", "must be an integer >= 1")
        if not self.alpha >= 0:
            raise ValidationError("risk_field.alpha", "must be >= 0")
        for key, gain in dict(self.alpha_by_id).items():
            if not gain >= 0:
                raise ValidationError(f"risk_field.alpha_by_id.{key}", "must be >= 0")
        if self.evolution not in EVOLUTION_MODES:
            raise ValidationError("risk_field.evolution", f"must be one of {EVOLUTION_MODES}")
        object.__setattr__(self, "n_history", int(self.n_history))
        object.__setattr__(self, "alpha_by_id", dict(self.alpha_by_id))

    def gain_for(self, obstacle_id: str) -> float:
        return float(self.alpha_by_id.get(obstacle_id, self.alpha))


class HistoryBuffer:
    """Ring buffer of the last N_H closed-loop distances to one obstacle."""

    def __init__(self, capacity: int):
        if int(capacity) != capacity or capacity < 1:
            raise ValidationError("n_history", "must be an integer >= 1")
        self._values = deque(maxlen=int(capacity))

    @property
    def capacity(self) -> int:
        return self._values.maxlen

    @property
    def latest(self) -> float:
        if not self._values:
            raise ValidationError("history", "buffer is empty")
        return self._values[-1]

    def push(self, d: float) -> float:
        """Append a distance, evicting the oldest when full, and return the mean."""
        self._values.append(float(d))
        return self.mean()

    def mean(self) -> float:
        if not self._values:
            raise ValidationError("history", "buffer is empty")
        return float(np.mean(self._values))

    def values(self) -> Tuple[float, ...]:
        return tuple(self._values)

    def copy(self) -> "HistoryBuffer":
        clone = HistoryBuffer(self.capacity)
        clone._values.extend(self._values)
        return clone

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        return f"HistoryBuffer(capacity={self.capacity}, values={list(self._values)})"


Histories = Dict[str, HistoryBuffer]


def distance(s: VehicleState, p: Sequence[float]) -> float:
    """Euclidean distance between the ego position and a point."""
    return float(np.hypot(s.x - p[0], s.y - p[1]))


def rpf_value(d: float, params: RiskFieldParams) -> float:
    """Classical repulsive field ``1/max(d, eps) - 1/d_safe`` inside d_safe."""
    if d < 0:
        raise ValidationError("d", "must be >= 0")
    if d >= params.d_safe:
        return 0.0
    return 1.0 / max(d, params.epsilon) - 1.0 / params.d_safe


def update_history(buf: HistoryBuffer, d: float) -> Tuple[HistoryBuffer, float]:
    """Push a distance and return the buffer with its new mean."""
    d_bar = buf.push(d)
    return buf, d_bar


def evolution_factor(d_bar: float, d: float, params: RiskFieldParams) -> float:
    """
    Evolution factor of one obstacle.

    ``sigmoid``: ``1 + lam * sigmoid((d_bar - d) / d_safe)``.
    ``binary``: ``1 + lam`` while approaching, else 1.
    ``none``: 1.
    """
    if params.evolution == "none":
        return 1.0
    if params.evolution == "binary":
        return 1.0 + params.lam * float(d_bar > d)
    return 1.0 + params.lam * float(expit((d_bar - d) / params.d_safe))


def resting_factor(params: RiskFieldParams) -> float:
    """Evolution factor of an obstacle at a steady distance (``d_bar = d``)."""
    return evolution_factor(0.0, 0.0, params)


def excess_factor(eta: float, params: RiskFieldParams) -> float:
    """
    Evolution factor measured from the steady-distance level.

    1 for an obstacle holding its distance or receding, growing towards
    ``1 + lam / 2`` (sigmoid) as it approaches. This is the EF that scales
    the risk ellipses and triggers alerts.
    """
    return max(1.0, 1.0 + eta - resting_factor(params))


def evolution_factors(obstacles: Sequence[Obstacle], histories: Mapping[str, HistoryBuffer],
                      params: RiskFieldParams) -> np.ndarray:
    """Per-obstacle factors from the histories' mean and latest distances."""
    etas = np.empty(len(obstacles))
    for i, obstacle in enumerate(obstacles):
        buf = histories.get(obstacle.id)
        if buf is None or len(buf) == 0:
            raise ValidationError(f"history.{obstacle.id}", "not initialized")
        etas[i] = evolution_factor(buf.mean(), buf.latest, params)
    return etas


def evaluate_field(positions: np.ndarray, obstacle_positions: np.ndarray,
                   coeffs: np.ndarray, params: RiskFieldParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized weighted field and its position gradient.

    Args:
        positions: Ego positions, shape (K, 2)
        obstacle_positions: Obstacle positions per ego row, shape (K, M, 2)
        coeffs: Per-obstacle multipliers, shape (M,)
        params: Field parameters

    Returns:
        Tuple of values (K,) and gradients (K, 2). The gradient is zero
        inside the epsilon clamp and beyond d_safe.
    """
    diff = positions[:, None, :] - obstacle_positions
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    active = d < params.d_safe
    clamped = np.maximum(d, params.epsilon)
    phi = np.where(active, 1.0 / clamped - 1.0 / params.d_safe, 0.0)
    values = phi @ coeffs

    sloped = active & (d > params.epsilon)
    scale = np.zeros_like(d)
    np.divide(-coeffs[None, :], d ** 3, out=scale, where=sloped)
    grads = np.einsum("km,kmc->kc", scale, diff)
    return values, grads


def _coefficients(obstacles: Sequence[Obstacle], histories: Mapping[str, HistoryBuffer],
                  params: RiskFieldParams, weights: Optional[np.ndarray]) -> np.ndarray:
    gains = np.array([params.gain_for(obstacle.id) for obstacle in obstacles])
    coeffs = evolution_factors(obstacles, histories, params) * gains
    if weights is not None:
        coeffs = coeffs * np.asarray(weights, dtype=float)
    return coeffs


def _single(s: VehicleState, obstacles: Sequence[Obstacle], k: int, dt: float,
            coeffs: np.ndarray, params: RiskFieldParams) -> Tuple[float, np.ndarray]:
    if not obstacles:
        return 0.0, np.zeros(2)
    points = np.array([obstacle.position_at(k, dt) for obstacle in obstacles])
    values, grads = evaluate_field(s.position[None, :], points[None, :, :], coeffs, params)
    return float(values[0]), grads[0]


def erpf_value(s: VehicleState, obstacles: Sequence[Obstacle],
               histories: Mapping[str, HistoryBuffer], k: int,
               params: RiskFieldParams, dt: float = DEFAULT_DT,
               weights: Optional[np.ndarray] = None) -> float:
    """
    Evolutionary field at state s with obstacles propagated k steps.

    Args:
        s: Ego state
        obstacles: Obstacles in the same order as ``weights``
        histories: Distance histories keyed by obstacle id
        k: Horizon step used to propagate obstacle positions
        params: Field parameters
        dt: Sampling period (s)
        weights: Optional extra per-obstacle multipliers (ellipse metric)

    Returns:
        Sum over obstacles of ``eta_i * alpha_i * phi(d_i)``
    """
    coeffs = _coefficients(obstacles, histories, params, weights) if obstacles else np.zeros(0)
    value, _ = _single(s, obstacles, k, dt, coeffs, params)
    return value


def erpf_gradient(s: VehicleState, obstacles: Sequence[Obstacle],
                  histories: Mapping[str, HistoryBuffer], k: int,
                  params: RiskFieldParams, dt: float = DEFAULT_DT,
                  weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient ``(dV/dx, dV/dy, 0)`` of ``erpf_value`` with frozen factors."""
    coeffs = _coefficients(obstacles, histories, params, weights) if obstacles else np.zeros(0)
    _, grad = _single(s, obstacles, k, dt, coeffs, params)
    return np.array([grad[0], grad[1], 0.0])


def rpf_field_value(s: VehicleState, obstacles: Sequence[Obstacle], k: int,
                    params: RiskFieldParams, dt: float = DEFAULT_DT) -> float:
    """Static field ``sum alpha_i * phi(d_i)``."""
    gains = np.array([params.gain_for(obstacle.id) for obstacle in obstacles])
    value, _ = _single(s, obstacles, k, dt, gains, params)
    return value
