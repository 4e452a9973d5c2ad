"""
Utilities package for ERPF-MPC.
"""

from erpfmpc.utils.config import (
    RunConfig,
    apply_overrides,
    build_planner_config,
    get_default_config,
    load_config,
    merge_configs,
    save_config,
)

__all__ = [
    "RunConfig",
    "apply_overrides",
    "build_planner_config",
    "get_default_config",
    "load_config",
    "merge_configs",
    "save_config",
]
