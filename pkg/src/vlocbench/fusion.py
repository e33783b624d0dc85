"""Planar extended Kalman filter fusing wheel-odometry increments with
visual pose estimates, with a fixed-distance outlier gate.

State is (x, y, yaw). Predict rotates the body-frame odometry increment
into the world frame; update uses an identity observation of (x, y, yaw)
with the innovation yaw wrapped, applied in Joseph form so the covariance
stays symmetric positive semi-definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateOrientation
from .geometry import Pose
from .world import wrap_angle


def default_measurement_noise(sigma_xy: float = 0.5, sigma_yaw_deg: float = 2.0) -> np.ndarray:
    return np.diag([sigma_xy**2, sigma_xy**2, np.radians(sigma_yaw_deg) ** 2])


@dataclass
class FusionConfig:
    process_noise: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-4, 1e-6]))
    measurement_noise: np.ndarray = field(default_factory=default_measurement_noise)
    outlier_gate: float = 20.0  # meters, planar

    def __post_init__(self) -> None:
        if self.outlier_gate <= 0:
            raise ValueError("outlier_gate must be positive")
        self.process_noise = np.asarray(self.process_noise, dtype=float).reshape(3, 3)
        self.measurement_noise = np.asarray(self.measurement_noise, dtype=float).reshape(3, 3)


@dataclass
class EkfState:
    mean: np.ndarray  # (x, y, yaw)
    covariance: np.ndarray  # (3, 3)

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).reshape(3)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(3, 3)
        _check_covariance(self.covariance)


def _check_covariance(p: np.ndarray) -> None:
    assert np.max(np.abs(p - p.T)) < 1e-9, "covariance not symmetric"
    assert np.min(np.linalg.eigvalsh(p)) >= -1e-12, "covariance not PSD"


def ekf_predict(state: EkfState, odom, config: FusionConfig) -> EkfState:
    """Propagate the belief through one odometry increment."""
    x, y, yaw = state.mean
    dx_b, dy_b = odom.delta_translation
    c, s = np.cos(yaw), np.sin(yaw)
    mean = np.array(
        [x + c * dx_b - s * dy_b, y + s * dx_b + c * dy_b, wrap_angle(yaw + odom.delta_yaw)]
    )
    f = np.array(
        [
            [1.0, 0.0, -s * dx_b - c * dy_b],
            [0.0, 1.0, c * dx_b - s * dy_b],
            [0.0, 0.0, 1.0],
        ]
    )
    cov = f @ state.covariance @ f.T + config.process_noise
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean=mean, covariance=cov)


def ekf_update(state: EkfState, measurement, config: FusionConfig) -> tuple[EkfState, bool]:
    """Fuse one planar pose measurement; returns (state, accepted).

    The measurement is a PoseEstimate whose pose is the vehicle body pose.
    Estimates farther than the outlier gate (planar distance) from the
    current mean are discarded and the state is returned unchanged.
    """
    z = np.array(project_pose_to_plane(measurement.pose))
    if np.hypot(z[0] - state.mean[0], z[1] - state.mean[1]) > config.outlier_gate:
        return state, False
    innovation = z - state.mean
    innovation[2] = wrap_angle(innovation[2])
    p = state.covariance
    r = config.measurement_noise
    s_mat = p + r  # H = I
    gain = p @ np.linalg.inv(s_mat)
    mean = state.mean + gain @ innovation
    mean[2] = wrap_angle(mean[2])
    i_kh = np.eye(3) - gain
    cov = i_kh @ p @ i_kh.T + gain @ r @ gain.T  # Joseph form
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean=mean, covariance=cov), True


def project_pose_to_plane(pose: Pose) -> tuple[float, float, float]:
    """Planar (x, y, yaw) of a body pose whose forward axis is +x."""
    forward = pose.matrix() @ np.array([1.0, 0.0, 0.0])
    horizontal = np.hypot(forward[0], forward[1])
    if horizontal < 1e-6:
        raise DegenerateOrientation("forward axis is vertical")
    yaw = float(np.arctan2(forward[1], forward[0]))
    return float(pose.translation[0]), float(pose.translation[1]), yaw
