"""Closed-loop episode execution with re-initialization, plus the
ground-truth-driven reference pass used for recall measurement.

One episode: odometry-driven EKF predict at the control rate, localization
(observe -> localize -> delayed EKF update) at the localization rate, PID
control toward route subgoals from the fused pose. Whenever the true
lateral deviation exceeds the failure threshold (or progress stalls), a
failure event is recorded and the vehicle, filter and controllers are
re-initialized at the last passed waypoint. Everything is keyed off
(config seed, episode index), so runs are reproducible.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import StallDetected
from ..fusion import EkfState, FusionConfig, ekf_predict, ekf_update
from ..geometry import Pose
from ..navstack import LocalPlanner, VehicleController, plan_global
from ..rng import derive_seed, stream
from ..vloc import GalleryMap, LocalizeParams, PoseEstimate, localize
from ..world import (
    CameraMount,
    VehicleState,
    WorldMap,
    calibrate_odometry,
    mounted_camera_pose,
    observe,
    quat_from_yaw,
    sample_odometry,
    step_vehicle,
    vehicle_pose_from_camera,
)
from .config import ScenarioConfig

MAX_CONSECUTIVE_STALLS = 8
EPISODE_TIME_FACTOR = 20.0  # hard wall: multiple of the nominal route time


@dataclass
class LocalizationRecord:
    timestamp: float
    truth_camera: Pose
    estimate: PoseEstimate | None
    accepted: bool = False
    latency: float = 0.0


@dataclass
class FailureEvent:
    timestamp: float
    x: float
    y: float
    cause: str  # "lateral" or "stall"


@dataclass
class TrajectorySample:
    timestamp: float
    truth: VehicleState
    ekf_mean: np.ndarray


@dataclass
class EpisodeResult:
    episode_index: int
    reinit_count: int
    completed: bool
    localization_log: list
    trajectory_log: list
    failure_events: list

    def __post_init__(self) -> None:
        assert self.reinit_count == len(self.failure_events)


def _fusion_config(config: ScenarioConfig, odom_model) -> FusionConfig:
    s = config.stack
    q = np.diag(
        [
            odom_model.step_sigma_translation**2,
            odom_model.step_sigma_translation**2,
            odom_model.step_sigma_yaw**2,
        ]
    )
    r = np.diag(
        [
            s.ekf_measurement_sigma_xy**2,
            s.ekf_measurement_sigma_xy**2,
            np.radians(s.ekf_measurement_sigma_yaw_deg) ** 2,
        ]
    )
    return FusionConfig(process_noise=q, measurement_noise=r, outlier_gate=s.ekf_outlier_gate)


def _initial_covariance(config: ScenarioConfig) -> np.ndarray:
    s = config.stack
    return np.diag(
        [
            s.ekf_initial_sigma_xy**2,
            s.ekf_initial_sigma_xy**2,
            np.radians(s.ekf_initial_sigma_yaw_deg) ** 2,
        ]
    )


def _waypoint_arcs(route, waypoints: np.ndarray) -> np.ndarray:
    return np.array([route.project(wp)[0] for wp in waypoints])


def run_episode(
    world: WorldMap,
    gallery: GalleryMap,
    config: ScenarioConfig,
    episode_index: int,
    use_vloc: bool = True,
) -> EpisodeResult:
    route = world.route
    s = config.stack
    dt = 1.0 / s.control_rate
    steps_per_loc = max(1, int(round(s.control_rate / s.localization_rate)))
    step_length = s.target_speed * dt
    odom_model = calibrate_odometry(
        s.odometry_position_drift_rate, s.odometry_rotation_drift_rate, step_length
    )
    fusion_cfg = _fusion_config(config, odom_model)
    p0 = _initial_covariance(config)

    waypoints = plan_global(route, s.waypoint_spacing)
    wp_arcs = _waypoint_arcs(route, waypoints)
    planner = LocalPlanner(waypoints, lookahead=s.lookahead)
    controller = VehicleController(s.lateral_gains, s.longitudinal_gains)

    query_mount = CameraMount(
        height=s.camera_height,
        offset_z=config.condition.camera_offset_z,
        pitch_theta=config.condition.camera_pitch_theta,
    )
    loc_params = LocalizeParams(top_k=s.top_k, ratio=s.nn_ratio)

    pos0, heading0 = route.point_at(0.0)
    truth = VehicleState(x=pos0[0], y=pos0[1], yaw=heading0, speed=0.0)
    ekf = EkfState(mean=np.array([truth.x, truth.y, truth.yaw]), covariance=p0.copy())

    rng_odom = stream(config.seed, "odom", episode_index)
    rng_obs = stream(config.seed, "observe", episode_index)

    localization_log: list[LocalizationRecord] = []
    trajectory_log: list[TrajectorySample] = []
    failure_events: list[FailureEvent] = []
    pending: list[tuple[float, PoseEstimate, LocalizationRecord]] = []

    max_arc = 0.0
    progress_arc = 0.0
    progress_time = 0.0
    consecutive_stalls = 0
    completed = False
    max_steps = int(EPISODE_TIME_FACTOR * route.total_length / s.target_speed / dt)

    for step in range(max_steps):
        t = step * dt

        if use_vloc and step % steps_per_loc == 0:
            cam_pose = mounted_camera_pose(truth, query_mount)
            obs = observe(
                world,
                cam_pose,
                gallery.intrinsics,
                config.condition,
                config.degradation,
                rng_obs,
                timestamp=t,
            )
            ransac = config.ransac_params(derive_seed(config.seed, "ransac", episode_index, step))
            estimate = localize(
                gallery,
                obs,
                dataclasses.replace(loc_params, ransac=ransac),
                latency=s.localization_latency,
            )
            record = LocalizationRecord(
                timestamp=t,
                truth_camera=obs.camera_pose_truth,
                estimate=estimate,
                latency=s.localization_latency,
            )
            localization_log.append(record)
            if estimate is not None:
                vx, vy, vyaw = vehicle_pose_from_camera(estimate.pose, query_mount)
                vehicle_est = dataclasses.replace(
                    estimate, pose=Pose(np.array([vx, vy, 0.0]), quat_from_yaw(vyaw))
                )
                pending.append((t + s.localization_latency, vehicle_est, record))

        subgoal, reached = planner.update((ekf.mean[0], ekf.mean[1], ekf.mean[2]))
        if reached:
            completed = True
            break
        cmd = controller.control(
            (ekf.mean[0], ekf.mean[1], ekf.mean[2]), truth.speed, subgoal, s.target_speed, dt
        )
        prev = truth
        truth = step_vehicle(prev, cmd.steer, cmd.throttle, dt, s.wheelbase)
        odom = sample_odometry(prev, truth, odom_model, rng_odom)
        ekf = ekf_predict(ekf, odom, fusion_cfg)
        while pending and pending[0][0] <= t + dt:
            _, vehicle_est, record = pending.pop(0)
            ekf, accepted = ekf_update(ekf, vehicle_est, fusion_cfg)
            record.accepted = accepted
        trajectory_log.append(TrajectorySample(timestamp=t + dt, truth=truth, ekf_mean=ekf.mean.copy()))

        arc, lateral = route.project(truth.position())
        max_arc = max(max_arc, arc)
        if max_arc - progress_arc >= config.metrics.stall_min_progress:
            progress_arc = max_arc
            progress_time = t
            consecutive_stalls = 0

        cause = None
        if lateral > config.metrics.failure_lateral_threshold:
            cause = "lateral"
        elif t - progress_time > config.metrics.stall_timeout:
            cause = "stall"
        if cause is not None:
            failure_events.append(FailureEvent(timestamp=t, x=truth.x, y=truth.y, cause=cause))
            if cause == "stall":
                consecutive_stalls += 1
                if consecutive_stalls >= MAX_CONSECUTIVE_STALLS:
                    raise StallDetected(
                        f"episode {episode_index}: no progress after "
                        f"{consecutive_stalls} consecutive stall re-initializations"
                    )
            # re-initialize at the last passed waypoint
            wp_index = int(np.searchsorted(wp_arcs, max_arc, side="right")) - 1
            wp_index = min(max(wp_index, 0), len(waypoints) - 1)
            wp_pos = waypoints[wp_index]
            wp_arc = wp_arcs[wp_index]
            _, wp_heading = route.point_at(float(wp_arc))
            truth = VehicleState(x=wp_pos[0], y=wp_pos[1], yaw=wp_heading, speed=0.0)
            ekf = EkfState(
                mean=np.array([truth.x, truth.y, truth.yaw]), covariance=p0.copy()
            )
            controller.reset()
            planner.reset_to(wp_index)
            pending.clear()
            max_arc = wp_arc
            progress_arc = wp_arc
            progress_time = t

    return EpisodeResult(
        episode_index=episode_index,
        reinit_count=len(failure_events),
        completed=completed,
        localization_log=localization_log,
        trajectory_log=trajectory_log,
        failure_events=failure_events,
    )


def run_reference_recall(
    world: WorldMap,
    gallery: GalleryMap,
    config: ScenarioConfig,
) -> list:
    """Drive the route on ground truth while localizing passively; returns
    the localization log (one pass per condition)."""
    route = world.route
    s = config.stack
    dt = 1.0 / s.control_rate
    steps_per_loc = max(1, int(round(s.control_rate / s.localization_rate)))
    waypoints = plan_global(route, s.waypoint_spacing)
    planner = LocalPlanner(waypoints, lookahead=s.lookahead)
    controller = VehicleController(s.lateral_gains, s.longitudinal_gains)
    query_mount = CameraMount(
        height=s.camera_height,
        offset_z=config.condition.camera_offset_z,
        pitch_theta=config.condition.camera_pitch_theta,
    )
    loc_params = LocalizeParams(top_k=s.top_k, ratio=s.nn_ratio)

    pos0, heading0 = route.point_at(0.0)
    truth = VehicleState(x=pos0[0], y=pos0[1], yaw=heading0, speed=0.0)
    rng_obs = stream(config.seed, "observe-reference")
    log: list[LocalizationRecord] = []
    max_steps = int(EPISODE_TIME_FACTOR * route.total_length / s.target_speed / dt)

    for step in range(max_steps):
        t = step * dt
        if step % steps_per_loc == 0:
            cam_pose = mounted_camera_pose(truth, query_mount)
            obs = observe(
                world,
                cam_pose,
                gallery.intrinsics,
                config.condition,
                config.degradation,
                rng_obs,
                timestamp=t,
            )
            ransac = config.ransac_params(derive_seed(config.seed, "ransac-reference", step))
            estimate = localize(
                gallery,
                obs,
                dataclasses.replace(loc_params, ransac=ransac),
                latency=s.localization_latency,
            )
            log.append(
                LocalizationRecord(
                    timestamp=t,
                    truth_camera=obs.camera_pose_truth,
                    estimate=estimate,
                    accepted=estimate is not None,
                    latency=s.localization_latency,
                )
            )
        subgoal, reached = planner.update((truth.x, truth.y, truth.yaw))
        if reached:
            break
        cmd = controller.control(
            (truth.x, truth.y, truth.yaw), truth.speed, subgoal, s.target_speed, dt
        )
        truth = step_vehicle(truth, cmd.steer, cmd.throttle, dt, s.wheelbase)
    return log
