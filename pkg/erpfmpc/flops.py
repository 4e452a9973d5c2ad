"""
Arithmetic-operation accounting for field and ellipse evaluation.

Every +, -, x, /, exp and sqrt counts as one operation. Comparisons,
clamps and memory traffic are free.
"""

from typing import Dict

# distance: 2 sub, 2 mul, 1 add, 1 sqrt
FLOPS_DISTANCE = 6
# 1/max(d, eps) - 1/d_safe, times gain, accumulate
FLOPS_FIELD_VALUE = FLOPS_DISTANCE + 4
# d^3 (2 mul), gain / d^3, 2 mul with the offset, 2 accumulate
FLOPS_FIELD_GRADIENT = 7
FLOPS_PER_INTERACTION = FLOPS_FIELD_VALUE + FLOPS_FIELD_GRADIENT
# (d_bar - d) / d_safe, exp, 1 + ., 1 / ., lam * ., 1 + .
FLOPS_EVOLUTION = 7
# TTC 3, semi-major 8, semi-minor 7, ERF 7, metric 3, EF scaling 2
FLOPS_ELLIPSE = 30


class FlopCounter:
    """
    Accumulates operation counts for one closed-loop run.

    Counts are kept per category. Ticks are delimited with
    ``start_tick``/``end_tick`` to report per-tick averages.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.interactions = 0
        self.field_flops = 0
        self.evolution_flops = 0
        self.ellipse_flops = 0
        self.iterations = 0
        self.ticks = 0
        self._tick_start = 0
        self.tick_totals = []

    @property
    def total(self) -> int:
        return self.field_flops + self.evolution_flops + self.ellipse_flops

    def add_interactions(self, count: int) -> None:
        """Record ``count`` obstacle-state field evaluations with gradient."""
        if self.enabled and count > 0:
            self.interactions += count
            self.field_flops += count * FLOPS_PER_INTERACTION

    def add_evolution(self, n_obstacles: int) -> None:
        if self.enabled:
            self.evolution_flops += n_obstacles * FLOPS_EVOLUTION

    def add_ellipses(self, n_obstacles: int) -> None:
        if self.enabled:
            self.ellipse_flops += n_obstacles * FLOPS_ELLIPSE

    def add_iterations(self, count: int) -> None:
        if self.enabled:
            self.iterations += count

    def start_tick(self) -> None:
        self._tick_start = self.total

    def end_tick(self) -> int:
        """Close the current tick and return its operation count."""
        spent = self.total - self._tick_start
        if self.enabled:
            self.ticks += 1
            self.tick_totals.append(spent)
        return spent

    @property
    def per_interaction(self) -> float:
        return self.field_flops / self.interactions if self.interactions else 0.0

    @property
    def per_iteration(self) -> float:
        return self.field_flops / self.iterations if self.iterations else 0.0

    @property
    def per_tick(self) -> float:
        return self.total / self.ticks if self.ticks else 0.0

    def summary(self) -> Dict[str, float]:
        return {
            "flops_total": self.total,
            "flops_per_interaction": self.per_interaction,
            "flops_per_iteration": self.per_iteration,
            "flops_per_step": self.per_tick,
            "interactions": self.interactions,
            "solver_iterations": self.iterations,
            "ticks": self.ticks,
        }
