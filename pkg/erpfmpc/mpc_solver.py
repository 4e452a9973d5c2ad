"""
Receding-horizon optimizer.

The cost is a quadratic tracking term plus the nonconvex risk field
evaluated along the predicted states. It is minimized over a box of
admissible controls by projected gradient descent with spectral
(Barzilai-Borwein) trial steps and Armijo backtracking, so every accepted
iterate decreases the objective. State limits on y and v are enforced by a
quadratic penalty on the prediction.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from erpfmpc.dynamics import (
    DEFAULT_DT,
    DEFAULT_HORIZON,
    INPUT_DIM,
    STATE_DIM,
    ControlInput,
    LinearModel,
    PredictionMatrices,
    ReferenceTrajectory,
    VehicleState,
    as_control_matrix,
    build_prediction_matrices,
    predict_states,
)
from erpfmpc.exceptions import NonFiniteError, ValidationError
from erpfmpc.flops import FlopCounter
from erpfmpc.risk_ellipse import EllipseParams, build_risk_ellipse, ellipse_weight, NO_CLOSING, time_to_collision
from erpfmpc.risk_field import (
    HistoryBuffer,
    Obstacle,
    RiskFieldParams,
    distance,
    evaluate_field,
    evolution_factor,
    evolution_factors,
    excess_factor,
    update_history,
)

logger = logging.getLogger(__name__)

# Accepted iterations in a row whose relative decrease is at rounding level
STAGNATION_WINDOW = 3
STAGNATION_RTOL = 1e-15


def _diag(values: Sequence[float], size: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        if arr.size != size:
            raise ValidationError(name, f"expected {size} diagonal entries")
        arr = np.diag(arr)
    if arr.shape != (size, size):
        raise ValidationError(name, f"expected a {size}x{size} matrix")
    return arr


@dataclass(frozen=True, eq=False)
class MPCWeights:
    """
    Cost weights.

    Attributes:
        Q: Stage state weight (3x3)
        R: Input weight (2x2), positive definite
        Q_N: Terminal state weight (3x3), defaults to ``10 Q``
        gamma: Weight of the risk field in the cost
    """

    Q: np.ndarray = field(default_factory=lambda: np.diag([0.1, 10.0, 1.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0]))
    Q_N: Optional[np.ndarray] = None
    gamma: float = 50.0

    def __post_init__(self):
        Q = _diag(self.Q, STATE_DIM, "weights.Q")
        R = _diag(self.R, INPUT_DIM, "weights.R")
        Q_N = 10.0 * Q if self.Q_N is None else _diag(self.Q_N, STATE_DIM, "weights.Q_N")
        for name, mat in (("weights.Q", Q), ("weights.Q_N", Q_N), ("weights.R", R)):
            if not np.all(np.isfinite(mat)) or not np.allclose(mat, mat.T):
                raise ValidationError(name, "must be finite and symmetric")
            if np.linalg.eigvalsh(mat)[0] < -1e-12:
                raise ValidationError(name, "must be positive semidefinite")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValidationError("weights.R", "must be positive definite")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValidationError("weights.gamma", "must be finite and >= 0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Q_N", Q_N)


@dataclass(frozen=True)
class BoxConstraints:
    """
    Control box (projected) and state box (penalized).

    ``y_lo``/``y_hi`` bound the ego center; scenarios replace them with
    their drivable band.
    """

    a_lo: float = -6.0
    a_hi: float = 3.0
    vy_lo: float = -3.0
    vy_hi: float = 3.0
    v_max: float = 50.0
    y_lo: float = 0.5
    y_hi: float = 6.5
    penalty: float = 1000.0

    def __post_init__(self):
        for lo, hi in (("a_lo", "a_hi"), ("vy_lo", "vy_hi"), ("y_lo", "y_hi")):
            if not getattr(self, lo) <= getattr(self, hi):
                raise ValidationError(f"constraints.{lo}", f"must be <= {hi}")
        if not self.v_max >= 0:
            raise ValidationError("constraints.v_max", "must be >= 0")
        if not self.penalty >= 0:
            raise ValidationError("constraints.penalty", "must be >= 0")

    def lower(self, N: int) -> np.ndarray:
        return np.tile([self.a_lo, self.vy_lo], N).astype(float)

    def upper(self, N: int) -> np.ndarray:
        return np.tile([self.a_hi, self.vy_hi], N).astype(float)

    def project(self, U: np.ndarray) -> np.ndarray:
        N = len(U) // INPUT_DIM
        return np.clip(U, self.lower(N), self.upper(N))


@dataclass(frozen=True)
class SolverSettings:
    """
    Iteration limits and line-search constants.

    ``tol`` bounds the projected-gradient norm relative to the norm of the
    tracking gradient at ``U = 0`` (floored at 1). When the solution
    passes closer than ``restart_clearance`` to a predicted obstacle
    without any lateral input, the solve is repeated from lateral detours
    on either side; 0 disables the restarts.
    """

    max_iters: int = 200
    tol: float = 1e-6
    armijo_slope: float = 1e-4
    shrink: float = 0.5
    min_step: float = 1e-12
    max_step: float = 1e3
    restart_clearance: float = 2.0

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValidationError("solver.max_iters", "must be an integer >= 0")
        if not self.tol > 0:
            raise ValidationError("solver.tol", "must be > 0")
        if not 0 < self.armijo_slope < 1:
            raise ValidationError("solver.armijo_slope", "must lie in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValidationError("solver.shrink", "must lie in (0, 1)")
        if not self.restart_clearance >= 0:
            raise ValidationError("solver.restart_clearance", "must be >= 0")


@dataclass(frozen=True)
class CBFParams:
    """Barrier decay rate of the CBF safety filter."""

    kappa: float = 1.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValidationError("cbf.kappa", "must be > 0")


@dataclass(frozen=True, eq=False)
class PlannerConfig:
    """Everything one planning agent needs besides the scenario."""

    dt: float = DEFAULT_DT
    horizon: int = DEFAULT_HORIZON
    risk: RiskFieldParams = field(default_factory=RiskFieldParams)
    ellipse: EllipseParams = field(default_factory=EllipseParams)
    weights: MPCWeights = field(default_factory=MPCWeights)
    bounds: BoxConstraints = field(default_factory=BoxConstraints)
    solver: SolverSettings = field(default_factory=SolverSettings)
    cbf: CBFParams = field(default_factory=CBFParams)

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValidationError("horizon.dt", "must be finite and > 0")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValidationError("horizon.N", "must be an integer >= 1")
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def model(self) -> LinearModel:
        return LinearModel.from_dt(self.dt)


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """
    ``J(U) = 0.5 U'HU + g'U + const`` for the tracking part of the cost.

    ``build_quadratic`` also attaches the stacked residual data, and
    ``value`` then evaluates ``|A s0 + B U - S_ref|_Q^2 + |U|_R^2``
    directly. Its rounding error then scales with the cost, not with
    ``const``.
    """

    H: np.ndarray
    g: np.ndarray
    const: float = 0.0
    offset: Optional[np.ndarray] = None
    calB: Optional[np.ndarray] = None
    calQ: Optional[np.ndarray] = None
    calR: Optional[np.ndarray] = None

    @property
    def has_residual(self) -> bool:
        return self.offset is not None

    def value(self, U: np.ndarray) -> float:
        if self.has_residual:
            residual = self.offset + self.calB @ U
            return float(residual @ self.calQ @ residual + U @ self.calR @ U)
        return float(0.5 * U @ self.H @ U + self.g @ U + self.const)

    @cached_property
    def gradient_scale(self) -> float:
        """Norm of the gradient at ``U = 0``, floored at 1."""
        return max(1.0, float(np.linalg.norm(self.g)))

    @cached_property
    def curvature(self) -> float:
        """Largest eigenvalue of H."""
        return float(np.linalg.eigvalsh(self.H)[-1])


def _stacked_weights(w: MPCWeights, N: int) -> Tuple[np.ndarray, np.ndarray]:
    calQ = np.kron(np.eye(N + 1), w.Q)
    calQ[N * STATE_DIM:, N * STATE_DIM:] = w.Q_N
    calR = np.kron(np.eye(N), w.R)
    return calQ, calR


def _reference_vector(S_ref, N: int) -> np.ndarray:
    if isinstance(S_ref, ReferenceTrajectory):
        S_ref = S_ref.stacked()
    ref = np.asarray(S_ref, dtype=float).reshape(-1)
    if ref.size != (N + 1) * STATE_DIM:
        raise ValidationError("S_ref", f"expected {(N + 1) * STATE_DIM} entries, got {ref.size}")
    return ref


def build_quadratic(pred: PredictionMatrices, w: MPCWeights, s0: VehicleState,
                    S_ref) -> QuadraticForm:
    """
    Tracking cost as a quadratic form in the stacked controls.

    ``H = 2 (B'QB + R)`` and ``g = 2 B'Q (A s0 - S_ref)`` with the stacked
    matrices of the horizon.

    Raises:
        ValidationError: If the reference does not match the horizon
    """
    N = pred.horizon
    ref = _reference_vector(S_ref, N)
    calQ, calR = _stacked_weights(w, N)
    residual = pred.calA @ s0.as_array() - ref
    QB = calQ @ pred.calB
    H = 2.0 * (pred.calB.T @ QB + calR)
    H = 0.5 * (H + H.T)
    g = 2.0 * (QB.T @ residual)
    const = float(residual @ calQ @ residual)
    return QuadraticForm(H=H, g=g, const=const, offset=residual, calB=pred.calB, calQ=calQ, calR=calR)


@dataclass(frozen=True, eq=False)
class RiskTerm:
    """
    Risk field along the horizon with per-tick frozen coefficients.

    Attributes:
        obstacle_positions: Predicted obstacle positions, shape (N, M, 2)
        coeffs: ``gamma * eta * alpha * R`` per obstacle, shape (M,)
        params: Field parameters
    """

    obstacle_positions: np.ndarray
    coeffs: np.ndarray
    params: RiskFieldParams

    @property
    def n_obstacles(self) -> int:
        return int(self.coeffs.size)

    def value_and_grad(self, states: np.ndarray,
                       flops: Optional[FlopCounter] = None) -> Tuple[float, np.ndarray]:
        """Risk of steps 0..N-1 and its gradient with respect to the states."""
        N = self.obstacle_positions.shape[0]
        values, grads = evaluate_field(states[:N, :2], self.obstacle_positions,
                                       self.coeffs, self.params)
        grad_states = np.zeros_like(states)
        grad_states[:N, :2] = grads
        if flops is not None:
            flops.add_interactions(N * self.n_obstacles)
        return float(np.sum(values)), grad_states


@dataclass(eq=False)
class MPCProblem:
    """One horizon optimization instance."""

    quadratic: QuadraticForm
    pred: PredictionMatrices
    s0: VehicleState
    bounds: BoxConstraints
    risk: Optional[RiskTerm] = None
    U_init: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.pred.horizon

    def predict(self, U: np.ndarray) -> np.ndarray:
        return predict_states(self.pred, self.s0.as_array(), U)

    def penalty(self, states: np.ndarray) -> Tuple[float, np.ndarray]:
        """Quadratic penalty on predicted y and v outside their box."""
        b = self.bounds
        grad = np.zeros_like(states)
        if b.penalty == 0:
            return 0.0, grad
        y = states[1:, 1]
        v = states[1:, 2]
        y_excess = np.maximum(y - b.y_hi, 0.0) - np.maximum(b.y_lo - y, 0.0)
        v_excess = np.maximum(v - b.v_max, 0.0) - np.maximum(-v, 0.0)
        value = b.penalty * float(y_excess @ y_excess + v_excess @ v_excess)
        grad[1:, 1] = 2.0 * b.penalty * y_excess
        grad[1:, 2] = 2.0 * b.penalty * v_excess
        return value, grad

    def active_state_constraints(self, U: np.ndarray) -> int:
        states = self.predict(U)[1:]
        b = self.bounds
        return int(np.sum((states[:, 1] > b.y_hi) | (states[:, 1] < b.y_lo))
                   + np.sum((states[:, 2] > b.v_max) | (states[:, 2] < 0.0)))

    def objective(self, U: np.ndarray,
                  flops: Optional[FlopCounter] = None) -> Tuple[float, np.ndarray]:
        """Full objective (tracking + risk + state penalty) and its gradient."""
        value = self.quadratic.value(U)
        grad = self.quadratic.H @ U + self.quadratic.g
        states = self.predict(U)
        pen_value, grad_states = self.penalty(states)
        value += pen_value
        if self.risk is not None and self.risk.n_obstacles:
            risk_value, risk_grad = self.risk.value_and_grad(states, flops)
            value += risk_value
            grad_states = grad_states + risk_grad
        grad = grad + self.pred.calB.T @ grad_states.reshape(-1)
        return value, grad


@dataclass(eq=False)
class SolveResult:
    U: np.ndarray
    cost: float
    iterations: int
    grad_norm: float
    converged: bool
    active_constraints: int
    cost_history: List[float]


def _check_finite(value: float, grad: np.ndarray, U: np.ndarray, iteration: int) -> None:
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NonFiniteError(f"non-finite objective or gradient at iteration {iteration}", U)


def solve(problem: MPCProblem, settings: SolverSettings = SolverSettings(),
          flops: Optional[FlopCounter] = None) -> SolveResult:
    """
    Minimize the problem objective over the control box.

    Args:
        problem: Horizon problem; ``U_init`` is projected onto the box
        settings: Iteration limits and line-search constants
        flops: Optional operation counter

    Returns:
        SolveResult with a feasible U whose objective does not exceed
        that of the projected initial guess

    Raises:
        NonFiniteError: If the cost or gradient becomes non-finite
    """
    N = problem.horizon
    lo, hi = problem.bounds.lower(N), problem.bounds.upper(N)
    U = np.zeros(N * INPUT_DIM) if problem.U_init is None else np.asarray(problem.U_init, dtype=float).reshape(-1)
    if U.size != N * INPUT_DIM:
        raise ValidationError("U_init", f"expected {N * INPUT_DIM} entries")
    U = np.clip(U, lo, hi)

    value, grad = problem.objective(U, flops)
    _check_finite(value, grad, U, 0)
    history = [value]
    trial = 1.0 / max(problem.quadratic.curvature, 1e-12)
    tol = settings.tol * problem.quadratic.gradient_scale
    iterations = 0
    flat = 0
    converged = False

    while True:
        grad_norm = float(np.linalg.norm(np.clip(U - grad, lo, hi) - U))
        if grad_norm < tol:
            converged = True
            break
        if flat >= STAGNATION_WINDOW:
            logger.debug("Cost stationary after %d iterations (|pg|=%.3g)", iterations, grad_norm)
            converged = True
            break
        if iterations >= settings.max_iters:
            break

        step_size = trial
        while True:
            candidate = np.clip(U - step_size * grad, lo, hi)
            cand_value, cand_grad = problem.objective(candidate, flops)
            _check_finite(cand_value, cand_grad, candidate, iterations + 1)
            if cand_value <= value + settings.armijo_slope * float(grad @ (candidate - U)):
                break
            step_size *= settings.shrink
            if step_size < settings.min_step:
                candidate = None
                break
        if candidate is None:
            logger.debug("Line search stalled after %d iterations", iterations)
            break

        s = candidate - U
        y = cand_grad - grad
        sy = float(s @ y)
        if sy > 0:
            trial = min(max(float(s @ s) / sy, settings.min_step), settings.max_step)
        else:
            trial = min(2.0 * step_size, settings.max_step)

        if value - cand_value <= STAGNATION_RTOL * max(1.0, abs(value)):
            flat += 1
        else:
            flat = 0
        U, value, grad = candidate, cand_value, cand_grad
        iterations += 1
        history.append(value)

    if flops is not None:
        flops.add_iterations(iterations)
    at_bound = int(np.sum(np.isclose(U, lo) | np.isclose(U, hi)))
    return SolveResult(
        U=U,
        cost=float(value),
        iterations=iterations,
        grad_norm=grad_norm,
        converged=converged,
        active_constraints=at_bound + problem.active_state_constraints(U),
        cost_history=history,
    )


def predicted_clearance(problem: MPCProblem, U: np.ndarray) -> float:
    """Smallest predicted ego-obstacle distance over steps 0..N-1; inf without risk."""
    if problem.risk is None or not problem.risk.n_obstacles:
        return math.inf
    obstacle_positions = problem.risk.obstacle_positions
    positions = problem.predict(U)[:obstacle_positions.shape[0], :2]
    gaps = positions[:, None, :] - obstacle_positions
    return float(np.min(np.hypot(gaps[..., 0], gaps[..., 1])))


def lateral_starts(bounds: BoxConstraints, N: int) -> List[np.ndarray]:
    """Full lateral speed to each side over the first third of the horizon, zero after."""
    starts = []
    for v_y in (bounds.vy_hi, bounds.vy_lo):
        controls = np.zeros((N, INPUT_DIM))
        controls[:max(1, N // 3), 1] = v_y
        starts.append(bounds.project(controls.reshape(-1)))
    return starts


def _restart_laterally(problem: MPCProblem, result: SolveResult, clearance: float,
                       settings: SolverSettings,
                       flops: Optional[FlopCounter] = None) -> SolveResult:
    """
    Re-solve from detours on both sides of an obstacle the solution runs into.

    Called for solutions without any lateral input: with the obstacle dead
    ahead the lateral gradient vanishes and the descent cannot leave the
    lane on its own. Solutions that keep the clearance are ranked by cost;
    when none does, the widest one wins.
    """
    candidates = [(clearance, result)]
    for U_init in lateral_starts(problem.bounds, problem.horizon):
        detour = solve(replace(problem, U_init=U_init), settings, flops)
        candidates.append((predicted_clearance(problem, detour.U), detour))

    clear = [(c, r) for c, r in candidates if c >= settings.restart_clearance]
    if clear:
        best_clearance, best = min(clear, key=lambda item: item[1].cost)
    else:
        best_clearance, best = max(candidates, key=lambda item: item[0])
    logger.debug("Predicted clearance %.2f m, restarted laterally: %.2f m at cost %.4g",
                 clearance, best_clearance, best.cost)
    return best


def total_cost(U, s0: VehicleState, refs, obstacles: Sequence[Obstacle],
               histories: Mapping[str, HistoryBuffer], w: MPCWeights,
               params: RiskFieldParams = RiskFieldParams(),
               model: Optional[LinearModel] = None,
               weights_by_obstacle: Optional[np.ndarray] = None) -> float:
    """
    Horizon cost summed stage by stage.

    ``sum_k |s_k - ref_k|_Q^2 + |u_k|_R^2 + gamma V(s_k)`` over
    k = 0..N-1 plus the terminal term ``|s_N - ref_N|_{Q_N}^2``.
    The state penalty is not part of this cost.
    """
    model = model or LinearModel.from_dt(DEFAULT_DT)
    controls = as_control_matrix(U)
    N = len(controls)
    pred = build_prediction_matrices(model, N)
    ref = _reference_vector(refs, N).reshape(-1, STATE_DIM)
    states = predict_states(pred, s0.as_array(), controls.reshape(-1))
    err = states - ref

    cost = float(np.einsum("ki,ij,kj->", err[:N], w.Q, err[:N]))
    cost += float(np.einsum("ki,ij,kj->", controls, w.R, controls))
    cost += float(err[N] @ w.Q_N @ err[N])

    if w.gamma > 0 and obstacles:
        coeffs = evolution_factors(obstacles, histories, params)
        coeffs = coeffs * np.array([params.gain_for(o.id) for o in obstacles])
        if weights_by_obstacle is not None:
            coeffs = coeffs * np.asarray(weights_by_obstacle, dtype=float)
        positions = _horizon_positions(obstacles, N, model.dt)
        values, _ = evaluate_field(states[:N, :2], positions, coeffs, params)
        cost += w.gamma * float(np.sum(values))
    return cost


def _horizon_positions(obstacles: Sequence[Obstacle], N: int, dt: float) -> np.ndarray:
    """Constant-velocity obstacle positions for steps 0..N-1, shape (N, M, 2)."""
    if not obstacles:
        return np.zeros((N, 0, 2))
    p0 = np.array([o.p0 for o in obstacles])
    vel = np.array([o.vel for o in obstacles])
    times = np.arange(N, dtype=float) * dt
    return p0[None, :, :] + vel[None, :, :] * times[:, None, None]


def shift_warm_start(U: np.ndarray) -> np.ndarray:
    """Drop the first input and repeat the last one."""
    controls = as_control_matrix(U)
    if len(controls) == 0:
        return controls.reshape(-1)
    return np.vstack([controls[1:], controls[-1:]]).reshape(-1)


@dataclass(eq=False)
class StepDiagnostics:
    """What one control tick computed, for logs and exports."""

    k: int
    iterations: int
    cost: float
    grad_norm: float
    converged: bool
    active_constraints: int
    U: np.ndarray
    distances: np.ndarray
    etas: np.ndarray
    v_erpf: float
    ttc: np.ndarray
    efs: np.ndarray
    ellipse_weights: np.ndarray
    alerts: List[str] = field(default_factory=list)
    cbf_fallback: bool = False

    def to_record(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "iterations": self.iterations,
            "cost": self.cost,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "active_constraints": self.active_constraints,
            "cbf_fallback": self.cbf_fallback,
        }


def mpc_step(s0: VehicleState, k: int, refs: ReferenceTrajectory,
             obstacles: Sequence[Obstacle], histories: Dict[str, HistoryBuffer],
             config: PlannerConfig, warm_start: Optional[np.ndarray] = None,
             flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
    """
    One tick of the receding-horizon loop.

    Obstacles are snapshots at the current tick: ``p0`` is the current
    position. The histories are updated in place with the current
    distances (an absent history is created, which initializes the mean
    to the current distance), evolution factors are frozen for the
    solve, and the first input of the optimal sequence is returned.
    With the ellipse subsystem enabled, each obstacle's ellipse is scaled
    by its excess factor (see ``excess_factor``), which also drives the
    alerts.

    Raises:
        NonFiniteError: Propagated from the solver
    """
    N = config.horizon
    if refs.horizon != N:
        raise ValidationError("refs", f"reference horizon {refs.horizon} != N={N}")
    pred = build_prediction_matrices(config.model, N)
    params = config.risk

    M = len(obstacles)
    distances = np.empty(M)
    etas = np.ones(M)
    for i, obstacle in enumerate(obstacles):
        buf = histories.get(obstacle.id)
        if buf is None:
            buf = histories[obstacle.id] = HistoryBuffer(params.n_history)
        d = distance(s0, obstacle.p0)
        _, d_bar = update_history(buf, d)
        distances[i] = d
        etas[i] = evolution_factor(d_bar, d, params)
    if flops is not None:
        flops.add_evolution(M)

    ttc = np.full(M, NO_CLOSING)
    efs = np.ones(M)
    weights = np.ones(M)
    alerts = []
    if config.ellipse.enabled:
        for i, obstacle in enumerate(obstacles):
            efs[i] = excess_factor(etas[i], params)
            ttc[i] = time_to_collision(s0.x, obstacle.p0[0], s0.v, obstacle.vel[0])
            ellipse = build_risk_ellipse(s0.position, s0.v, obstacle.p0, obstacle.vel[0],
                                         obstacle.width, config.ellipse, ef=efs[i])
            weights[i] = ellipse_weight(s0.position, ellipse, config.ellipse)
            logger.debug("Tick %d %s: TTC=%.3g s, TWH=%.3g s, EF=%.3f, R=%.3f",
                         k, obstacle.id, ttc[i], config.ellipse.twh, efs[i], weights[i])
            if efs[i] > config.ellipse.ef_threshold:
                alerts.append(obstacle.id)
        if flops is not None:
            flops.add_ellipses(M)

    gains = np.array([params.gain_for(o.id) for o in obstacles]) if M else np.zeros(0)
    field_coeffs = etas * gains * weights
    v_erpf = 0.0
    if M:
        current = np.array([o.p0 for o in obstacles], dtype=float)
        values, _ = evaluate_field(s0.position[None, :], current[None, :, :], field_coeffs, params)
        v_erpf = float(values[0])

    risk = None
    if config.weights.gamma > 0 and M:
        risk = RiskTerm(obstacle_positions=_horizon_positions(obstacles, N, config.dt),
                        coeffs=config.weights.gamma * field_coeffs, params=params)

    problem = MPCProblem(
        quadratic=build_quadratic(pred, config.weights, s0, refs),
        pred=pred,
        s0=s0,
        bounds=config.bounds,
        risk=risk,
        U_init=warm_start,
    )
    result = solve(problem, config.solver, flops)
    clearance = predicted_clearance(problem, result.U)
    if clearance < config.solver.restart_clearance and not np.any(result.U[1::INPUT_DIM]):
        result = _restart_laterally(problem, result, clearance, config.solver, flops)
    if not result.converged:
        logger.info("Tick %d: solver stopped after %d iterations (|pg|=%.3g)",
                    k, result.iterations, result.grad_norm)

    u = ControlInput.from_array(result.U[:INPUT_DIM])
    return u, StepDiagnostics(
        k=k,
        iterations=result.iterations,
        cost=result.cost,
        grad_norm=result.grad_norm,
        converged=result.converged,
        active_constraints=result.active_constraints,
        U=result.U,
        distances=distances,
        etas=etas,
        v_erpf=v_erpf,
        ttc=ttc,
        efs=efs,
        ellipse_weights=weights,
        alerts=alerts,
    )
