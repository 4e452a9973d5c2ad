"""
Tests for the planner and its baselines.
"""

import logging
from dataclasses import replace

import numpy as np
import pytest

from erpfmpc.controllers import (
    CBFController,
    ERPFController,
    ERPFEllipseController,
    PlainMPCController,
    RPFController,
    available_controllers,
    build_controller,
    cbf_filter,
)
from erpfmpc.controllers.cbf import barrier_constraints
from erpfmpc.dynamics import ControlInput, VehicleState, lane_change_reference, step
from erpfmpc.exceptions import ValidationError
from erpfmpc.mpc_solver import PlannerConfig
from erpfmpc.risk_ellipse import EllipseParams
from erpfmpc.risk_field import HistoryBuffer, Obstacle


def _snapshots(obstacles, k, dt):
    return [Obstacle(o.id, tuple(o.position_at(k, dt)), o.vel, o.width) for o in obstacles]


def _closed_loop(controller, s0, obstacles, n_ticks):
    """Run a controller for a few ticks against constant-velocity obstacles."""
    config = controller.config
    state = s0
    states = [state.as_array()]
    for k in range(n_ticks):
        refs = lane_change_reference(state.y, 1.75, 30.0, state.x, config.horizon, config.dt)
        u, _ = controller.compute_control(state, k, refs, _snapshots(obstacles, k, config.dt))
        state = step(state, u, config.model)
        states.append(state.as_array())
    return np.array(states)


def test_registry_names():
    """All controllers are registered under their names."""
    assert available_controllers() == ["erpf_mpc", "erpf_ellipse_mpc", "rpf_mpc", "plain_mpc", "cbf_filter"]
    assert isinstance(build_controller("cbf_filter"), CBFController)
    assert build_controller("rpf_mpc").get_name() == "rpf_mpc"


def test_unknown_controller_rejected():
    """Unknown names raise a validation error."""
    with pytest.raises(ValidationError):
        build_controller("pid")


def test_baselines_adjust_config():
    """The static baseline pins evolution, the plain baseline drops the risk weight."""
    config = PlannerConfig()

    assert RPFController(config).config.risk.evolution == "none"
    assert PlainMPCController(config).config.weights.gamma == 0.0
    assert ERPFController(config).config is config
    assert ERPFEllipseController(config).config.ellipse.enabled is True
    assert config.ellipse.enabled is False


def test_controllers_agree_without_nearby_obstacles():
    """Far obstacles leave every controller with the same input."""
    s0 = VehicleState(0.0, 1.75, 30.0)
    far = [Obstacle("HDV1", (100.0, 5.25), (30.0, 0.0))]
    config = PlannerConfig()
    refs = lane_change_reference(1.75, 1.75, 30.0, 0.0, config.horizon, config.dt)

    inputs = []
    for cls in (ERPFController, ERPFEllipseController, RPFController, PlainMPCController, CBFController):
        u, _ = cls(config).compute_control(s0, 0, refs, far)
        inputs.append(u.as_array())

    for other in inputs[1:]:
        np.testing.assert_array_equal(other, inputs[0])


def test_zero_gain_matches_static_field():
    """With lam = 0 the evolutionary planner reproduces the static baseline."""
    config = PlannerConfig(risk=replace(PlannerConfig().risk, lam=0.0))
    s0 = VehicleState(0.0, 1.75, 30.0)
    obstacles = [Obstacle("HDV1", (12.0, 1.75), (24.0, 0.0))]

    erpf = _closed_loop(ERPFController(config), s0, obstacles, 5)
    rpf = _closed_loop(RPFController(config), s0, obstacles, 5)

    np.testing.assert_array_equal(erpf, rpf)


def test_compute_control_sets_warm_start_and_history():
    """The shifted solution and the distance history persist across ticks."""
    controller = ERPFController()
    s0 = VehicleState(0.0, 1.75, 30.0)
    obstacles = [Obstacle("HDV1", (20.0, 5.25), (25.0, 0.0))]
    refs = lane_change_reference(1.75, 1.75, 30.0, 0.0, 30, 0.1)

    _, diagnostics = controller.compute_control(s0, 0, refs, obstacles)

    assert controller.warm_start.shape == (60,)
    np.testing.assert_array_equal(controller.warm_start[:-2], diagnostics.U[2:])
    assert len(controller.histories["HDV1"]) == 1

    controller.reset()
    assert controller.histories == {}
    assert controller.warm_start is None


def test_alert_logged_once_per_obstacle(caplog):
    """An approaching obstacle is reported the first time only."""
    config = PlannerConfig(ellipse=EllipseParams(enabled=True))
    controller = ERPFController(config)
    for _ in range(9):
        controller.histories.setdefault("HDV1", HistoryBuffer(10)).push(25.0)
    s0 = VehicleState(0.0, 1.75, 30.0)
    obstacles = [Obstacle("HDV1", (8.0, 1.75), (20.0, 0.0))]
    refs = lane_change_reference(1.75, 1.75, 30.0, 0.0, 30, 0.1)

    with caplog.at_level(logging.WARNING, logger="erpfmpc.controllers.base"):
        _, first = controller.compute_control(s0, 0, refs, obstacles)
        controller.compute_control(s0, 1, refs, obstacles)

    assert first.alerts == ["HDV1"]
    alerts = [r for r in caplog.records if "excess factor" in r.getMessage()]
    assert len(alerts) == 1


def test_ellipse_controller_weights_off_axis_obstacle():
    """Only the ellipse variant discounts a closing obstacle in the next lane."""
    s0 = VehicleState(5.0, 1.75, 45.0)
    obstacles = [Obstacle("HDV2", (45.0, 5.25), (30.0, 0.0))]
    refs = lane_change_reference(1.75, 1.75, 45.0, 5.0, 30, 0.1)

    _, plain = ERPFController().compute_control(s0, 0, refs, obstacles)
    _, weighted = build_controller("erpf_ellipse_mpc").compute_control(s0, 0, refs, obstacles)

    assert plain.ellipse_weights[0] == 1.0
    assert 0.0 < weighted.ellipse_weights[0] < 1.0
    assert weighted.etas[0] == plain.etas[0]


def test_barrier_rows():
    """One linear condition per obstacle."""
    config = PlannerConfig()
    s0 = VehicleState(0.0, 1.75, 30.0)
    G, b = barrier_constraints(s0, [Obstacle("HDV1", (15.0, 1.75), (26.0, 0.0))], config)

    np.testing.assert_allclose(G, [[-3.0, 0.0]])
    np.testing.assert_allclose(b, [-5.0])


def test_cbf_keeps_feasible_nominal():
    """An input that already satisfies every barrier is returned untouched."""
    config = PlannerConfig()
    s0 = VehicleState(0.0, 1.75, 30.0)
    u_nom = ControlInput(1.0, 0.5)

    u, fallback = cbf_filter(s0, u_nom, [Obstacle("HDV1", (60.0, 1.75), (30.0, 0.0))], config)

    assert u is u_nom
    assert fallback is False


def test_cbf_projects_onto_barrier():
    """A closing obstacle caps the acceleration at the barrier boundary."""
    config = PlannerConfig()
    s0 = VehicleState(0.0, 1.75, 30.0)

    u, fallback = cbf_filter(s0, ControlInput(3.0, 0.0),
                             [Obstacle("HDV1", (15.0, 1.75), (26.0, 0.0))], config)

    assert fallback is False
    assert u.a == pytest.approx(5.0 / 3.0, abs=1e-5)
    assert u.v_y == pytest.approx(0.0, abs=1e-5)


def test_cbf_falls_back_to_braking(caplog):
    """No admissible input satisfies the barrier: brake hard and warn."""
    config = PlannerConfig()
    s0 = VehicleState(0.0, 1.75, 30.0)

    with caplog.at_level(logging.WARNING, logger="erpfmpc.controllers.cbf"):
        u, fallback = cbf_filter(s0, ControlInput(0.0, 0.0),
                                 [Obstacle("HDV1", (12.0, 1.75), (20.0, 0.0))], config)

    assert fallback is True
    assert u.a == config.bounds.a_lo
    assert u.v_y == 0.0
    assert any("infeasible" in r.getMessage() for r in caplog.records)


def test_cbf_controller_records_fallback():
    """The controller reports the fallback in its diagnostics."""
    controller = CBFController()
    s0 = VehicleState(0.0, 1.75, 30.0)
    refs = lane_change_reference(1.75, 1.75, 30.0, 0.0, 30, 0.1)

    u, diagnostics = controller.compute_control(s0, 0, refs, [Obstacle("HDV1", (12.0, 1.75), (20.0, 0.0))])

    assert diagnostics.cbf_fallback is True
    assert u.a == controller.config.bounds.a_lo


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
