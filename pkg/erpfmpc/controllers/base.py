"""
Base controller interface for closed-loop runs.
"""

import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import Optional, Sequence, Set, Tuple

import numpy as np

from erpfmpc.dynamics import ControlInput, ReferenceTrajectory, VehicleState
from erpfmpc.flops import FlopCounter
from erpfmpc.mpc_solver import PlannerConfig, StepDiagnostics, shift_warm_start
from erpfmpc.risk_field import Histories, Obstacle

logger = logging.getLogger(__name__)


class ControllerKind(Enum):
    """Enumeration of the benchmarked controllers."""
    ERPF_MPC = "erpf_mpc"
    ERPF_ELLIPSE_MPC = "erpf_ellipse_mpc"
    RPF_MPC = "rpf_mpc"
    PLAIN_MPC = "plain_mpc"
    CBF_FILTER = "cbf_filter"


class Controller(ABC):
    """
    Base class for all planners driven by the simulation harness.

    A controller owns the per-run state that persists across ticks: the
    distance histories of every obstacle it has seen and the warm start
    for the next solve. One instance serves one run; call ``reset``
    before reusing it.
    """

    def __init__(self, config: Optional[PlannerConfig] = None):
        """
        Initialize the controller.

        Args:
            config: Planner configuration, defaults when omitted
        """
        self.config = config or PlannerConfig()
        self.histories: Histories = {}
        self.warm_start: Optional[np.ndarray] = None
        self._alerted: Set[str] = set()

    @abstractmethod
    def get_name(self) -> str:
        """Return the controller's registry name."""
        pass

    @abstractmethod
    def plan(self, state: VehicleState, k: int, reference: ReferenceTrajectory,
             obstacles: Sequence[Obstacle],
             flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
        """
        Compute one control input.

        Args:
            state: Current ego state
            k: Tick index
            reference: Reference over the horizon, anchored at the current tick
            obstacles: Obstacle snapshots at the current tick
            flops: Optional operation counter

        Returns:
            Tuple of the input to apply and the tick diagnostics
        """
        pass

    def reset(self) -> None:
        self.histories = {}
        self.warm_start = None
        self._alerted = set()

    def compute_control(self, state: VehicleState, k: int, reference: ReferenceTrajectory,
                        obstacles: Sequence[Obstacle],
                        flops: Optional[FlopCounter] = None) -> Tuple[ControlInput, StepDiagnostics]:
        """Plan, then carry the shifted solution over to the next tick."""
        u, diagnostics = self.plan(state, k, reference, obstacles, flops)
        self.warm_start = shift_warm_start(diagnostics.U)
        for obstacle_id in diagnostics.alerts:
            if obstacle_id not in self._alerted:
                self._alerted.add(obstacle_id)
                logger.warning("Tick %d: excess factor of %s above %.2f", k, obstacle_id,
                               self.config.ellipse.ef_threshold)
        return u, diagnostics

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.get_name()!r})"
