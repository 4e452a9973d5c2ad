"""
Collision risk ellipses built from time-to-collision (TTC) and the time
window of hazard (TWH).

The ellipse is centred on the obstacle and aligned with the lane. Its
semi-major axis covers the longitudinal reach of the closing motion, its
semi-minor axis the lateral uncertainty. Inside the ellipse the risk
metric is 1, outside it decays exponentially with the normalized
elliptic distance.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from erpfmpc.exceptions import ValidationError

logger = logging.getLogger(__name__)

NO_CLOSING = math.inf
SWEEP_COLUMNS = ["ttc", "twh", "a", "b", "aspect_ratio"]


@dataclass(frozen=True)
class EllipseParams:
    """
    Ellipse tunables.

    Attributes:
        enabled: Weight the risk field by the ellipse metric in the planner
        a_cap: Hard cap on the semi-major axis (m)
        b_cap: Hard cap on the semi-minor axis (m)
        a_max_decel: Maximum feasible deceleration (m/s^2)
        t_horizon: Planning-horizon duration (s)
        d_lat_max: Lateral motion budget (m)
        alpha_decay: Decay rate of the exponential risk map
        twh: Time window of hazard used in closed loop (s)
        ef_threshold: Excess factor above which an alert is raised
    """

    enabled: bool = False
    a_cap: float = 50.0
    b_cap: float = 10.0
    a_max_decel: float = 6.0
    t_horizon: float = 3.0
    d_lat_max: float = 3.5
    alpha_decay: float = 2.0
    twh: float = 0.5
    ef_threshold: float = 2.2

    def __post_init__(self):
        for name in ("a_cap", "b_cap", "a_max_decel", "t_horizon", "d_lat_max",
                     "alpha_decay", "twh", "ef_threshold"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and np.isfinite(value) and value > 0):
                raise ValidationError(f"ellipse.{name}", "must be finite and > 0")
        if not isinstance(self.enabled, bool):
            raise ValidationError("ellipse.enabled", "must be a boolean")


@dataclass(frozen=True)
class RiskEllipse:
    """Axis-aligned risk ellipse around an obstacle."""

    center: Tuple[float, float]
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValidationError("ellipse", f"degenerate axes a={self.a}, b={self.b}")

    @property
    def aspect_ratio(self) -> float:
        return self.a / self.b


def time_to_collision(x_ego: float, x_obs: float, v_ego: float, v_obs: float) -> float:
    """
    Longitudinal time to collision.

    Returns:
        ``(x_obs - x_ego) / (v_ego - v_obs)`` when the ego closes on an
        obstacle ahead, otherwise ``NO_CLOSING`` (infinity)
    """
    gap = x_obs - x_ego
    closing = v_ego - v_obs
    if closing <= 0 or gap < 0:
        return NO_CLOSING
    return gap / closing


def semi_major(v_ego: float, v_obs: float, ttc: float, p: EllipseParams,
               w_obs: float = 2.0) -> float:
    """
    Longitudinal reach, bounded by the braking envelope over the horizon.

    The result is capped at ``a_cap`` and floored at the obstacle width.
    """
    if not (np.isfinite(ttc) and ttc >= 0):
        raise ValidationError("ttc", "must be finite and >= 0")
    v_rel = abs(v_ego - v_obs)
    reach = (v_ego - v_obs) * ttc
    envelope = v_rel * p.t_horizon + 0.5 * p.a_max_decel * p.t_horizon ** 2
    a = min(reach, envelope, p.a_cap)
    return float(min(max(a, w_obs), p.a_cap))


def semi_minor(w_obs: float, v_ego: float, v_obs: float, twh: float,
               p: EllipseParams) -> float:
    """Lateral extent: half width combined with the budgeted lateral drift."""
    if not w_obs > 0:
        raise ValidationError("w_obs", "must be > 0")
    if not twh >= 0:
        raise ValidationError("twh", "must be >= 0")
    lateral = min(abs(v_ego - v_obs) * twh, p.d_lat_max)
    b = math.sqrt((w_obs / 2.0) ** 2 + lateral ** 2)
    return float(min(b, p.b_cap))


def ellipse_risk_factor(rel: Sequence[float], e: RiskEllipse) -> float:
    """Normalized elliptic distance of a point relative to the ellipse center."""
    if not (e.a > 0 and e.b > 0):
        raise ValidationError("ellipse", "degenerate axes")
    return float(math.hypot(rel[0] / e.a, rel[1] / e.b))


def risk_metric(erf: float, alpha_decay: float) -> float:
    """1 inside the ellipse, ``exp(-alpha (ERF - 1))`` outside."""
    if not erf >= 0:
        raise ValidationError("erf", "must be >= 0")
    if erf <= 1.0:
        return 1.0
    return float(math.exp(-alpha_decay * (erf - 1.0)))


def build_risk_ellipse(ego_position: Sequence[float], v_ego: float,
                       obstacle_position: Sequence[float], v_obs: float,
                       w_obs: float, p: EllipseParams,
                       ef: float = 1.0) -> Optional[RiskEllipse]:
    """
    Ellipse for one obstacle scaled by the excess factor ``ef``.

    Returns ``None`` when the ego is not closing on the obstacle.
    """
    ttc = time_to_collision(ego_position[0], obstacle_position[0], v_ego, v_obs)
    if ttc == NO_CLOSING:
        return None
    a = min(ef * semi_major(v_ego, v_obs, ttc, p, w_obs=w_obs), p.a_cap)
    b = min(ef * semi_minor(w_obs, v_ego, v_obs, p.twh, p), p.b_cap)
    return RiskEllipse(center=(float(obstacle_position[0]), float(obstacle_position[1])), a=a, b=b)


def ellipse_weight(ego_position: Sequence[float], ellipse: Optional[RiskEllipse],
                   p: EllipseParams) -> float:
    """Risk metric of the ego position; 1 when there is no ellipse."""
    if ellipse is None:
        return 1.0
    rel = (ego_position[0] - ellipse.center[0], ego_position[1] - ellipse.center[1])
    return risk_metric(ellipse_risk_factor(rel, ellipse), p.alpha_decay)


def aspect_ratio_sweep(ttc_grid: Sequence[float], twh_grid: Sequence[float],
                       v_rel: float, w_obs: float, p: EllipseParams) -> pd.DataFrame:
    """
    Tabulate ellipse axes over a TTC x TWH grid.

    The obstacle is taken at rest and the ego at ``v_rel``.

    Returns:
        DataFrame with columns ttc, twh, a, b, aspect_ratio; rows ordered
        TTC-major
    """
    if len(ttc_grid) == 0 or len(twh_grid) == 0:
        raise ValidationError("grid", "TTC and TWH grids must be non-empty")

    rows = []
    for ttc in ttc_grid:
        a = semi_major(v_rel, 0.0, float(ttc), p, w_obs=w_obs)
        for twh in twh_grid:
            b = semi_minor(w_obs, v_rel, 0.0, float(twh), p)
            rows.append((float(ttc), float(twh), a, b, a / b))
    logger.debug("Sweep evaluated %d cells", len(rows))
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
