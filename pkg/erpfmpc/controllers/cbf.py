"""
Control barrier function safety filter on top of the plain MPC.

For each obstacle the barrier ``h = d^2 - d_safe^2`` must satisfy
``dh/dt + kappa h >= 0``. Using the longitudinal speed after one period
of acceleration, ``v + a dt``, and the commanded lateral speed, the
condition is linear in ``u = (a, v_y)``:

    2 dx dt a + 2 dy v_y >= -kappa h - 2 dx (v - v_ox) + 2 dy v_oy

The filter returns the input closest to the nominal one that satisfies
every condition inside the input box.
"""

import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from erpfmpc.controllers.base import Controller, ControllerKind
from erpfmpc.controllers.mpc import risk_free_config
from erpfmpc.dynamics import ControlInput, ReferenceTrajectory, VehicleState
from erpfmpc.flops import FlopCounter
from erpfmpc.mpc_solver import PlannerConfig, StepDiagnostics, mpc_step
from erpfmpc.risk_field import HistoryBuffer, Obstacle

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9


def barrier_constraints(s0: VehicleState, obstacles: Sequence[Obstacle],
                        config: PlannerConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Rows ``G`` and bounds ``b`` of ``G u >= b``, one row per obstacle."""
    if not obstacles:
        return np.zeros((0, 2)), np.zeros(0)
    p = np.array([o.p0 for o in obstacles])
    vel = np.array([o.vel for o in obstacles])
    dx = s0.x - p[:, 0]
    dy = s0.y - p[:, 1]
    h = dx ** 2 + dy ** 2 - config.risk.d_safe ** 2
    G = np.column_stack([2.0 * dx * config.dt, 2.0 * dy])
    b = -config.cbf.kappa * h - 2.0 * dx * (s0.v - vel[:, 0]) + 2.0 * dy * vel[:, 1]
    return G, b


def cbf_filter(s0: VehicleState, u_nom: ControlInput, obstacles: Sequence[Obstacle],
               config: PlannerConfig) -> Tuple[ControlInput, bool]:
    """
    Minimally invasive correction of a nominal input.

    Returns:
        Tuple of the filtered input and whether the filter fell back to
        maximum braking because no admissible input satisfies every
        barrier condition
    """
    G, b = barrier_constraints(s0, obstacles, config)
    nominal = u_nom.as_array()
    if np.all(G @ nominal >= b - FEASIBILITY_TOL):
        return u_nom, False

    bounds = config.bounds
    box = [(bounds.a_lo, bounds.a_hi), (bounds.vy_lo, bounds.vy_hi)]
    start = np.clip(nominal, [bounds.a_lo, bounds.vy_lo], [bounds.a_hi, bounds.vy_hi])
    result = minimize(
        lambda u: float(np.sum((u - nominal) ** 2)),
        start,
        jac=lambda u: 2.0 * (u - nominal),
        method="SLSQP",
        bounds=box,
        constraints=[{"type": "ineq", "fun": lambda u: G @ u - b, "jac": lambda u: G}],
        options={"ftol": 1e-10, "maxiter": 100},
    )
    if result.success and np.all(G @ result.x >= b - 1e-6):
        return ControlInput.from_array(np.clip(result.x, [bounds.a_lo, bounds.vy_lo],
                                               [bounds.a_hi, bounds.vy_hi])), False

    logger.warning("CBF filter infeasible at (x=%.2f, y=%.2f): %s; braking at %.1f m/s^2",
                   s0.x, s0.y, result.message, bounds.a_lo)
    return ControlInput(bounds.a_lo, 0.0), True


def baseline_cbf(s0: VehicleState, k: int, refs: ReferenceTrajectory,
                 obstacles: Sequence[Obstacle], histories: Dict[str, HistoryBuffer],
                 config: PlannerConfig, warm_start: Optional[np.ndarray] = None,
                 flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
    """Plain MPC followed by the barrier filter."""
    u_nom, diagnostics = mpc_step(s0, k, refs, obstacles, histories, risk_free_config(config),
                                  warm_start, flops)
    u, fallback = cbf_filter(s0, u_nom, obstacles, config)
    diagnostics.cbf_fallback = fallback
    return u, diagnostics


class CBFController(Controller):
    """Plain MPC with a per-tick barrier safety filter."""

    kind = ControllerKind.CBF_FILTER

    def get_name(self) -> str:
        return self.kind.value

    def plan(self, state: VehicleState, k: int, reference: ReferenceTrajectory,
             obstacles: Sequence[Obstacle],
             flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
        return baseline_cbf(state, k, reference, obstacles, self.histories, self.config,
                            warm_start=self.warm_start, flops=flops)
