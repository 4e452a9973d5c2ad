"""
Risk-field MPC controllers: the evolutionary planner, its ellipse-weighted
variant and its two MPC baselines.

The static-field baseline runs the same pipeline with every evolution
factor pinned to 1. The plain baseline drops the risk term from the cost.
The ellipse variant always weights the field by the TTC/TWH risk metric.
"""

from dataclasses import replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from erpfmpc.controllers.base import Controller, ControllerKind
from erpfmpc.dynamics import ControlInput, ReferenceTrajectory, VehicleState
from erpfmpc.flops import FlopCounter
from erpfmpc.mpc_solver import PlannerConfig, StepDiagnostics, mpc_step
from erpfmpc.risk_field import HistoryBuffer, Obstacle


def static_field_config(config: PlannerConfig) -> PlannerConfig:
    return replace(config, risk=replace(config.risk, evolution="none"))


def risk_free_config(config: PlannerConfig) -> PlannerConfig:
    return replace(config, weights=replace(config.weights, gamma=0.0))


def ellipse_config(config: PlannerConfig) -> PlannerConfig:
    return replace(config, ellipse=replace(config.ellipse, enabled=True))


def baseline_rpf(s0: VehicleState, k: int, refs: ReferenceTrajectory,
                 obstacles: Sequence[Obstacle], histories: Dict[str, HistoryBuffer],
                 config: PlannerConfig, warm_start: Optional[np.ndarray] = None,
                 flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
    """``mpc_step`` with the static field (all evolution factors 1)."""
    return mpc_step(s0, k, refs, obstacles, histories, static_field_config(config), warm_start, flops)


def baseline_plain_mpc(s0: VehicleState, k: int, refs: ReferenceTrajectory,
                       obstacles: Sequence[Obstacle], histories: Dict[str, HistoryBuffer],
                       config: PlannerConfig, warm_start: Optional[np.ndarray] = None,
                       flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
    """``mpc_step`` without the risk term."""
    return mpc_step(s0, k, refs, obstacles, histories, risk_free_config(config), warm_start, flops)


class MPCController(Controller):
    """Receding-horizon planner over a fixed planner configuration."""

    kind = ControllerKind.ERPF_MPC

    def get_name(self) -> str:
        return self.kind.value

    def plan(self, state: VehicleState, k: int, reference: ReferenceTrajectory,
             obstacles: Sequence[Obstacle],
             flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
        return mpc_step(state, k, reference, obstacles, self.histories, self.config,
                        warm_start=self.warm_start, flops=flops)


class ERPFController(MPCController):
    """Evolutionary risk-field MPC."""

    kind = ControllerKind.ERPF_MPC


class RPFController(MPCController):
    """Static risk-field MPC."""

    kind = ControllerKind.RPF_MPC

    def __init__(self, config: Optional[PlannerConfig] = None):
        super().__init__(config)
        self.config = static_field_config(self.config)


class PlainMPCController(MPCController):
    """Tracking MPC blind to obstacles."""

    kind = ControllerKind.PLAIN_MPC

    def __init__(self, config: Optional[PlannerConfig] = None):
        super().__init__(config)
        self.config = risk_free_config(self.config)


class ERPFEllipseController(MPCController):
    """Evolutionary risk-field MPC weighted by the risk ellipses."""

    kind = ControllerKind.ERPF_ELLIPSE_MPC

    def __init__(self, config: Optional[PlannerConfig] = None):
        super().__init__(config)
        self.config = ellipse_config(self.config)
