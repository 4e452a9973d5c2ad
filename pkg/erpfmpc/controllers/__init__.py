"""
Controllers package: the evolutionary planner, its ellipse variant and
the baselines.
"""

from typing import Dict, List, Optional, Type

from erpfmpc.controllers.base import Controller, ControllerKind
from erpfmpc.controllers.cbf import CBFController, baseline_cbf, cbf_filter
from erpfmpc.controllers.mpc import (
    ERPFEllipseController,
    ERPFController,
    PlainMPCController,
    RPFController,
    baseline_plain_mpc,
    baseline_rpf,
)
from erpfmpc.exceptions import ValidationError
from erpfmpc.mpc_solver import PlannerConfig

CONTROLLERS: Dict[str, Type[Controller]] = {
    ControllerKind.ERPF_MPC.value: ERPFController,
    ControllerKind.ERPF_ELLIPSE_MPC.value: ERPFEllipseController,
    ControllerKind.RPF_MPC.value: RPFController,
    ControllerKind.PLAIN_MPC.value: PlainMPCController,
    ControllerKind.CBF_FILTER.value: CBFController,
}


def available_controllers() -> List[str]:
    return list(CONTROLLERS)


def build_controller(name: str, config: Optional[PlannerConfig] = None) -> Controller:
    """
    Instantiate a controller by registry name.

    Raises:
        ValidationError: If the name is unknown
    """
    try:
        cls = CONTROLLERS[name]
    except KeyError:
        raise ValidationError("controller", f"unknown controller '{name}' "
                                            f"(known: {', '.join(CONTROLLERS)})") from None
    return cls(config)


__all__ = [
    "Controller",
    "ControllerKind",
    "ERPFController",
    "ERPFEllipseController",
    "RPFController",
    "PlainMPCController",
    "CBFController",
    "CONTROLLERS",
    "available_controllers",
    "build_controller",
    "baseline_rpf",
    "baseline_plain_mpc",
    "baseline_cbf",
    "cbf_filter",
]
