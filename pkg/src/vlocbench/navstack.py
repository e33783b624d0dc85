"""Waypoint planning, lookahead subgoal selection and the two PID
controllers (steering and throttle)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import Route, wrap_angle


@dataclass
class PidGains:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 1.0
    output_limit: float = 1.0

    def __post_init__(self) -> None:
        if self.integral_limit <= 0 or self.output_limit <= 0:
            raise ValueError("limits must be positive")


@dataclass
class ControlCommand:
    steer: float  # radians, positive = left
    throttle: float  # normalized [-1, 1]


# tuned on the ground-truth closed loop: worst-case cross-track < 0.2 m on
# both built-in courses at 4 m/s
DEFAULT_LATERAL_GAINS = PidGains(kp=2.0, ki=0.05, kd=0.1, integral_limit=0.5, output_limit=0.6)
DEFAULT_LONGITUDINAL_GAINS = PidGains(kp=0.8, ki=0.1, kd=0.0, integral_limit=1.0, output_limit=1.0)
DEFAULT_LOOKAHEAD = 2.0
DEFAULT_WAYPOINT_SPACING = 2.0


class Pid:
    def __init__(self, gains: PidGains):
        self.gains = gains
        self.integral = 0.0
        self.last_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.last_error = None

    def step(self, error: float, dt: float) -> float:
        g = self.gains
        self.integral = float(
            np.clip(self.integral + error * dt, -g.integral_limit, g.integral_limit)
        )
        derivative = 0.0 if self.last_error is None else (error - self.last_error) / dt
        self.last_error = error
        out = g.kp * error + g.ki * self.integral + g.kd * derivative
        return float(np.clip(out, -g.output_limit, g.output_limit))


def plan_global(route: Route, waypoint_spacing: float) -> np.ndarray:
    """Waypoints along the route at uniform arc steps, keeping the original
    polyline vertices so corners survive resampling. First point is the
    start, last is the goal."""
    if waypoint_spacing <= 0:
        raise ValueError("waypoint_spacing must be positive")
    total = route.total_length
    arcs = list(np.arange(0.0, total, waypoint_spacing)) + [total]
    arcs += [float(s) for s in route.cumulative_arcs()]
    arcs = sorted(set(min(max(s, 0.0), total) for s in arcs))
    merged = [arcs[0]]
    for s in arcs[1:]:
        if s - merged[-1] > 1e-9:
            merged.append(s)
    return np.array([route.point_at(s)[0] for s in merged])


def next_subgoal(
    waypoints: np.ndarray,
    pose: tuple[float, float, float],
    lookahead: float,
    min_index: int = 0,
) -> tuple[np.ndarray, int, bool]:
    """First waypoint at least ``lookahead`` ahead of the point on the
    waypoint polyline closest to the pose; never indexes backwards.

    Returns (subgoal, index, goal_reached).
    """
    if len(waypoints) == 0:
        raise ValueError("waypoints must be non-empty")
    p = np.array([pose[0], pose[1]])
    goal = waypoints[-1]
    if np.linalg.norm(goal - p) <= lookahead:
        return goal, len(waypoints) - 1, True

    seg_start = waypoints[:-1]
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    rel = p - seg_start
    t = np.einsum("ij,ij->i", rel, seg) / seg_len**2
    t = np.clip(t, 0.0, 1.0)
    closest = seg_start + t[:, None] * seg
    d = np.linalg.norm(closest - p, axis=1)
    i = int(np.argmin(d))
    s_here = cum[i] + t[i] * seg_len[i]
    target_arc = s_here + lookahead
    idx = int(np.searchsorted(cum, target_arc, side="left"))
    idx = max(idx, min_index)
    idx = min(idx, len(waypoints) - 1)
    return waypoints[idx], idx, False


class LocalPlanner:
    """Owns the monotone subgoal index for one episode."""

    def __init__(self, waypoints: np.ndarray, lookahead: float = DEFAULT_LOOKAHEAD):
        self.waypoints = np.asarray(waypoints, dtype=float)
        self.lookahead = lookahead
        self.index = 0

    def update(self, pose: tuple[float, float, float]) -> tuple[np.ndarray, bool]:
        subgoal, idx, reached = next_subgoal(self.waypoints, pose, self.lookahead, self.index)
        self.index = max(self.index, idx)
        return subgoal, reached

    def reset_to(self, index: int) -> None:
        self.index = min(max(index, 0), len(self.waypoints) - 1)


class VehicleController:
    """Two PID loops: bearing-to-subgoal steering, speed-tracking throttle."""

    def __init__(
        self,
        lateral: PidGains = DEFAULT_LATERAL_GAINS,
        longitudinal: PidGains = DEFAULT_LONGITUDINAL_GAINS,
    ):
        self.lateral = Pid(lateral)
        self.longitudinal = Pid(longitudinal)

    def reset(self) -> None:
        self.lateral.reset()
        self.longitudinal.reset()

    def control(
        self,
        pose: tuple[float, float, float],
        speed: float,
        subgoal: np.ndarray,
        target_speed: float,
        dt: float,
    ) -> ControlCommand:
        if dt <= 0:
            raise ValueError("dt must be positive")
        x, y, yaw = pose
        bearing = np.arctan2(subgoal[1] - y, subgoal[0] - x)
        heading_error = wrap_angle(bearing - yaw)
        steer = self.lateral.step(heading_error, dt)
        throttle = self.longitudinal.step(target_speed - speed, dt)
        return ControlCommand(steer=steer, throttle=throttle)
