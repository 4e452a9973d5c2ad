"""
ERPF-MPC - receding-horizon planning with evolutionary risk potential fields.

Risk fields that grow with an obstacle's recent approach, optionally
weighted by TTC/TWH collision ellipses, are folded into a box-constrained
MPC and benchmarked in closed loop against plain MPC, static-field MPC and
a CBF safety filter.
"""

__version__ = "0.1.0"
__author__ = "ERPF-MPC Team"

from erpfmpc.controllers import build_controller
from erpfmpc.harness import compute_metrics, detect_collision, monte_carlo, run_scenario
from erpfmpc.mpc_solver import PlannerConfig, mpc_step
from erpfmpc.scenarios import get_scenario, list_scenarios, load_scenario

__all__ = [
    "PlannerConfig",
    "build_controller",
    "compute_metrics",
    "detect_collision",
    "get_scenario",
    "list_scenarios",
    "load_scenario",
    "monte_carlo",
    "mpc_step",
    "run_scenario",
]
