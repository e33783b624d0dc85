import numpy as np
import pytest

from vlocbench.navstack import (
    LocalPlanner,
    Pid,
    PidGains,
    VehicleController,
    next_subgoal,
    plan_global,
)
from vlocbench.world import Route, VehicleState, make_route, step_vehicle


def _straight_route(length=100.0):
    return Route([(np.array([0.0, 0.0]), 0.0), (np.array([length, 0.0]), 0.0)], length)


# -------------------------------------------------------------- plan_global


def test_plan_global_fencepost_count():
    wps = plan_global(_straight_route(100.0), 10.0)
    assert len(wps) == 11
    assert np.allclose(wps[0], [0, 0]) and np.allclose(wps[-1], [100, 0])


def test_plan_global_spacing_exceeds_length():
    wps = plan_global(_straight_route(50.0), 80.0)
    assert len(wps) == 2
    assert np.allclose(wps, [[0, 0], [50, 0]])


def test_plan_global_preserves_length():
    route = make_route("long_course")
    wps = plan_global(route, 4.0)
    resampled = float(np.sum(np.linalg.norm(np.diff(wps, axis=0), axis=1)))
    assert abs(resampled - route.total_length) / route.total_length < 0.001


# ------------------------------------------------------------- next_subgoal


def test_subgoal_lookahead_distance():
    wps = plan_global(_straight_route(100.0), 1.0)
    subgoal, idx, reached = next_subgoal(wps, (0.0, 0.0, 0.0), 5.0)
    assert not reached
    assert abs(subgoal[0] - 5.0) <= 1.0


def test_subgoal_goal_reached():
    wps = plan_global(_straight_route(100.0), 10.0)
    _, _, reached = next_subgoal(wps, (97.0, 0.0, 0.0), 5.0)
    assert reached


def test_subgoal_lateral_offset_matches_projection():
    wps = plan_global(_straight_route(100.0), 2.0)
    on_route, i1, _ = next_subgoal(wps, (40.0, 0.0, 0.0), 5.0)
    offset, i2, _ = next_subgoal(wps, (40.0, 1.0, 0.0), 5.0)
    assert i1 == i2
    assert np.allclose(on_route, offset)


def test_subgoal_monotone_along_trajectory():
    route = make_route("short_course")
    wps = plan_global(route, 4.0)
    planner = LocalPlanner(wps, lookahead=4.0)
    last = -1
    for s in np.linspace(0, route.total_length, 300):
        pos, heading = route.point_at(float(s))
        planner.update((pos[0], pos[1], heading))
        assert planner.index >= last
        last = planner.index


# --------------------------------------------------------------------- PID


def test_pid_zero_error_zero_output():
    pid = Pid(PidGains(kp=1.0, ki=0.5, kd=0.2))
    assert pid.step(0.0, 0.1) == 0.0


def test_pid_output_clamped():
    pid = Pid(PidGains(kp=100.0, output_limit=0.6))
    assert pid.step(10.0, 0.1) == 0.6
    assert pid.step(-10.0, 0.1) == -0.6


def test_pid_integrator_clamped():
    pid = Pid(PidGains(kp=0.0, ki=1.0, integral_limit=0.5))
    for _ in range(1000):
        out = pid.step(10.0, 0.1)
    assert out <= 0.5


def test_controller_aligned_zero_command():
    ctl = VehicleController()
    cmd = ctl.control((0.0, 0.0, 0.0), speed=4.0, subgoal=np.array([10.0, 0.0]), target_speed=4.0, dt=0.02)
    assert cmd.steer == 0.0
    assert cmd.throttle == 0.0


def test_controller_left_subgoal_steers_left():
    ctl = VehicleController()
    cmd = ctl.control((0.0, 0.0, 0.0), speed=4.0, subgoal=np.array([5.0, 5.0]), target_speed=4.0, dt=0.02)
    assert cmd.steer > 0.0


def test_controller_slow_speed_throttles_up():
    ctl = VehicleController()
    cmd = ctl.control((0.0, 0.0, 0.0), speed=1.0, subgoal=np.array([10.0, 0.0]), target_speed=4.0, dt=0.02)
    assert cmd.throttle > 0.0


# ----------------------------------------------------- ground-truth closed loop


@pytest.mark.parametrize("shape", ["long_course", "short_course"])
def test_ground_truth_closed_loop_tracks_route(shape):
    from vlocbench.navstack import DEFAULT_LOOKAHEAD, DEFAULT_WAYPOINT_SPACING

    route = make_route(shape)
    wps = plan_global(route, DEFAULT_WAYPOINT_SPACING)
    planner = LocalPlanner(wps, lookahead=DEFAULT_LOOKAHEAD)
    controller = VehicleController()
    pos0, heading0 = route.point_at(0.0)
    state = VehicleState(x=pos0[0], y=pos0[1], yaw=heading0, speed=0.0)
    dt = 0.02
    max_lateral = 0.0
    reached = False
    for _ in range(int(1.5 * route.total_length / 4.0 / dt) + 20_000):
        subgoal, reached = planner.update((state.x, state.y, state.yaw))
        if reached:
            break
        cmd = controller.control((state.x, state.y, state.yaw), state.speed, subgoal, 4.0, dt)
        state = step_vehicle(state, cmd.steer, cmd.throttle, dt)
        _, lateral = route.project(state.position())
        max_lateral = max(max_lateral, lateral)
    assert reached, "vehicle did not reach the goal"
    assert max_lateral < 0.5, f"cross-track error {max_lateral:.3f} m"
