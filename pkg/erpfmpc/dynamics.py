"""
Point-mass vehicle model, reference trajectories and stacked prediction
matrices for the MPC horizon.

Conventions used repo-wide:

* state ``s = (x, y, v)``, control ``u = (a, v_y)``
* stacked states are ``[s0; s1; ...; sN]`` and stacked controls are
  ``[u0; u1; ...; u_{N-1}]``, i.e. ``U = [a0, vy0, a1, vy1, ...]``
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from erpfmpc.exceptions import ValidationError

STATE_DIM = 3
INPUT_DIM = 2
DEFAULT_DT = 0.1
DEFAULT_HORIZON = 30

ArrayLike = Union[Sequence[float], np.ndarray]


def _require_finite(name: str, values: ArrayLike) -> None:
    if not np.all(np.isfinite(np.asarray(values, dtype=float))):
        raise ValidationError(name, "all entries must be finite")


@dataclass(frozen=True)
class VehicleState:
    """Ego pose and longitudinal speed."""

    x: float
    y: float
    v: float

    def __post_init__(self):
        _require_finite("state", (self.x, self.y, self.v))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v], dtype=float)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, values: ArrayLike) -> "VehicleState":
        x, y, v = (float(value) for value in values)
        return cls(x, y, v)


@dataclass(frozen=True)
class ControlInput:
    """Longitudinal acceleration and lateral velocity command."""

    a: float
    v_y: float

    def __post_init__(self):
        _require_finite("control", (self.a, self.v_y))

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.v_y], dtype=float)

    @classmethod
    def from_array(cls, values: ArrayLike) -> "ControlInput":
        a, v_y = (float(value) for value in values)
        return cls(a, v_y)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """
    Discrete-time point-mass model ``s' = A s + B u``.

    Attributes:
        dt: Sampling period (s)
        A: 3x3 state matrix
        B: 3x2 input matrix
    """

    dt: float
    A: np.ndarray
    B: np.ndarray

    @classmethod
    def from_dt(cls, dt: float = DEFAULT_DT) -> "LinearModel":
        """Build the model for a sampling period."""
        return _model_for(float(dt))


@lru_cache(maxsize=16)
def _model_for(dt: float) -> LinearModel:
    if not np.isfinite(dt) or dt <= 0:
        raise ValidationError("dt", "must be finite and > 0")
    A = np.array([[1.0, 0.0, dt],
                  [0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0]])
    B = np.array([[0.0, 0.0],
                  [0.0, dt],
                  [dt, 0.0]])
    A.setflags(write=False)
    B.setflags(write=False)
    return LinearModel(dt=dt, A=A, B=B)


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """N+1 reference states, one row per horizon step."""

    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] != STATE_DIM or len(states) < 1:
            raise ValidationError("reference", "expected an (N+1) x 3 array")
        _require_finite("reference", states)
        object.__setattr__(self, "states", states)

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def stacked(self) -> np.ndarray:
        return self.states.reshape(-1)


@dataclass(frozen=True, eq=False)
class PredictionMatrices:
    """Stacked maps ``S = calA s0 + calB U`` over an N-step horizon."""

    calA: np.ndarray
    calB: np.ndarray
    horizon: int


def step(s: VehicleState, u: ControlInput, m: LinearModel) -> VehicleState:
    """
    Advance the vehicle by one sampling period.

    Speed is clamped at zero after integration.
    """
    nxt = m.A @ s.as_array() + m.B @ u.as_array()
    _require_finite("state", nxt)
    return VehicleState(float(nxt[0]), float(nxt[1]), max(float(nxt[2]), 0.0))


def lane_change_reference(y1: float, y2: float, v_ref: float, x0: float,
                          N: int, dt: float) -> ReferenceTrajectory:
    """
    Linear lane-change reference over N steps.

    Args:
        y1: Start lane center (m)
        y2: Target lane center (m)
        v_ref: Reference speed (m/s)
        x0: Longitudinal start position (m)
        N: Number of horizon steps
        dt: Sampling period (s)

    Returns:
        Reference with ``y_k = y1 + (k/N)(y2 - y1)``

    Raises:
        ValidationError: If N < 1
    """
    if int(N) != N or N < 1:
        raise ValidationError("N", "must be an integer >= 1")
    _require_finite("reference", (y1, y2, v_ref, x0, dt))
    k = np.arange(N + 1, dtype=float)
    y = y1 + (k / N) * (y2 - y1)
    y[-1] = y2
    x = x0 + v_ref * k * dt
    v = np.full(N + 1, float(v_ref))
    return ReferenceTrajectory(np.column_stack([x, y, v]))


def build_prediction_matrices(m: LinearModel, N: int) -> PredictionMatrices:
    """
    Stack the dynamics over the horizon.

    ``calA = [I; A; ...; A^N]`` and block ``(r, c)`` of ``calB`` is
    ``A^(r-1-c) B`` for ``c < r``.
    """
    if int(N) != N or N < 1:
        raise ValidationError("N", "must be an integer >= 1")
    return _prediction_for(m.dt, int(N))


@lru_cache(maxsize=32)
def _prediction_for(dt: float, N: int) -> PredictionMatrices:
    m = _model_for(dt)
    powers = [np.eye(STATE_DIM)]
    for _ in range(N):
        powers.append(m.A @ powers[-1])

    calA = np.vstack(powers)
    calB = np.zeros(((N + 1) * STATE_DIM, N * INPUT_DIM))
    for r in range(1, N + 1):
        for c in range(r):
            block = powers[r - 1 - c] @ m.B
            calB[r * STATE_DIM:(r + 1) * STATE_DIM,
                 c * INPUT_DIM:(c + 1) * INPUT_DIM] = block

    calA.setflags(write=False)
    calB.setflags(write=False)
    return PredictionMatrices(calA=calA, calB=calB, horizon=N)


def as_control_matrix(U: ArrayLike) -> np.ndarray:
    """Return controls as an (N, 2) array from flat or row form."""
    arr = np.asarray(U, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, INPUT_DIM)
    if arr.ndim == 1:
        if arr.size % INPUT_DIM:
            raise ValidationError("U", "flat control vector must have even length")
        return arr.reshape(-1, INPUT_DIM)
    if arr.ndim != 2 or arr.shape[1] != INPUT_DIM:
        raise ValidationError("U", "expected shape (N, 2)")
    return arr


def rollout(s0: VehicleState, U: ArrayLike, m: LinearModel,
            clamp_speed: bool = True) -> np.ndarray:
    """
    Iterate ``step`` over a control sequence.

    Args:
        s0: Initial state
        U: Controls, flat ``[a0, vy0, ...]`` or shape (N, 2)
        m: Linear model
        clamp_speed: Clamp v at zero after each step (the stacked
            prediction does not clamp)

    Returns:
        Array of shape (N+1, 3) starting with s0
    """
    controls = as_control_matrix(U)
    states = np.empty((len(controls) + 1, STATE_DIM))
    states[0] = s0.as_array()
    for k, u in enumerate(controls):
        nxt = m.A @ states[k] + m.B @ u
        if clamp_speed:
            nxt[2] = max(nxt[2], 0.0)
        states[k + 1] = nxt
    return states


def predict_states(pred: PredictionMatrices, s0: ArrayLike, U: ArrayLike) -> np.ndarray:
    """Stacked prediction reshaped to (N+1, 3)."""
    stacked = pred.calA @ np.asarray(s0, dtype=float) + pred.calB @ np.asarray(U, dtype=float).reshape(-1)
    return stacked.reshape(-1, STATE_DIM)
