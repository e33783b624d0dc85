"""Scenario configuration: dataclasses plus the INI file format used by the
CLI. Every tunable named in the benchmark appears here as a key with its
default, so runs are fully reproducible from the file alone."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..geometry import CameraIntrinsics, RansacParams
from ..navstack import (
    DEFAULT_LATERAL_GAINS,
    DEFAULT_LONGITUDINAL_GAINS,
    DEFAULT_LOOKAHEAD,
    DEFAULT_WAYPOINT_SPACING,
    PidGains,
)
from ..world import DegradationModel, EnvironmentCondition, WorldSpec


@dataclass
class StackParams:
    target_speed: float = 4.0
    control_rate: float = 50.0
    localization_rate: float = 2.0
    localization_latency: float = 0.166
    top_k: int = 5
    nn_ratio: float = 0.8
    ransac_inlier_threshold_px: float = 4.0
    ransac_max_iterations: int = 1000
    ransac_confidence: float = 0.99
    ekf_outlier_gate: float = 20.0
    ekf_measurement_sigma_xy: float = 0.5
    ekf_measurement_sigma_yaw_deg: float = 2.0
    ekf_initial_sigma_xy: float = 0.3
    ekf_initial_sigma_yaw_deg: float = 2.0
    odometry_position_drift_rate: float = 0.085
    odometry_rotation_drift_rate: float = 0.4
    lookahead: float = DEFAULT_LOOKAHEAD
    waypoint_spacing: float = DEFAULT_WAYPOINT_SPACING
    wheelbase: float = 2.5
    camera_height: float = 1.6
    lateral_gains: PidGains = field(default_factory=lambda: DEFAULT_LATERAL_GAINS)
    longitudinal_gains: PidGains = field(default_factory=lambda: DEFAULT_LONGITUDINAL_GAINS)

    def __post_init__(self) -> None:
        if self.control_rate <= 0 or self.localization_rate <= 0:
            raise ConfigError("rates must be positive")
        if self.control_rate < self.localization_rate:
            raise ConfigError("control rate must be >= localization rate")


@dataclass
class MetricsParams:
    episodes: int = 5
    failure_lateral_threshold: float = 2.0
    stall_timeout: float = 30.0
    stall_min_progress: float = 1.0
    t1: tuple = (0.25, 2.0)
    t2: tuple = (0.5, 5.0)
    t3: tuple = (5.0, 10.0)

    def __post_init__(self) -> None:
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.failure_lateral_threshold <= 0:
            raise ConfigError("failure_lateral_threshold must be positive")


@dataclass
class ScenarioConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    gallery_spacing: float = 2.0
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    condition: EnvironmentCondition = field(default_factory=EnvironmentCondition)
    degradation: DegradationModel = field(default_factory=DegradationModel)
    stack: StackParams = field(default_factory=StackParams)
    metrics: MetricsParams = field(default_factory=MetricsParams)
    seed: int = 0
    method_label: str = "synthetic-hloc"
    world_file: str = "world.json"
    gallery_file: str = "gallery.npz"

    def ransac_params(self, seed: int) -> RansacParams:
        return RansacParams(
            inlier_threshold_px=self.stack.ransac_inlier_threshold_px,
            max_iterations=self.stack.ransac_max_iterations,
            confidence=self.stack.ransac_confidence,
            seed=seed,
        )


_WORLD_KEYS = {
    "route_shape": str,
    "landmark_density": float,
    "seed": int,
    "lateral_offset": float,
    "module_period": float,
    "descriptor_jitter": float,
    "file": str,
}
_GALLERY_KEYS = {
    "spacing": float,
    "focal_x": float,
    "focal_y": float,
    "principal_x": float,
    "principal_y": float,
    "width": int,
    "height": int,
    "file": str,
}
_CONDITION_KEYS = {
    "illumination_k": int,
    "visual_range": str,  # empty = unlimited
    "camera_offset_z": float,
    "camera_pitch_theta": float,
    "rain": bool,
    "dropout_max": float,
    "descriptor_sigma_max": float,
    "pixel_sigma": float,
    "fog_falloff_fraction": float,
    "view_angle_sigma_scale": float,
    "rain_pixel_sigma": float,
}
_STACK_KEYS = {
    "target_speed": float,
    "control_rate": float,
    "localization_rate": float,
    "localization_latency": float,
    "top_k": int,
    "nn_ratio": float,
    "ransac_inlier_threshold_px": float,
    "ransac_max_iterations": int,
    "ransac_confidence": float,
    "ekf_outlier_gate": float,
    "ekf_measurement_sigma_xy": float,
    "ekf_measurement_sigma_yaw_deg": float,
    "ekf_initial_sigma_xy": float,
    "ekf_initial_sigma_yaw_deg": float,
    "odometry_position_drift_rate": float,
    "odometry_rotation_drift_rate": float,
    "lookahead": float,
    "waypoint_spacing": float,
    "wheelbase": float,
    "camera_height": float,
    "lateral_kp": float,
    "lateral_ki": float,
    "lateral_kd": float,
    "lateral_integral_limit": float,
    "lateral_output_limit": float,
    "longitudinal_kp": float,
    "longitudinal_ki": float,
    "longitudinal_kd": float,
    "longitudinal_integral_limit": float,
    "longitudinal_output_limit": float,
}
_METRICS_KEYS = {
    "episodes": int,
    "failure_lateral_threshold": float,
    "stall_timeout": float,
    "stall_min_progress": float,
    "t1_translation": float,
    "t1_rotation_deg": float,
    "t2_translation": float,
    "t2_rotation_deg": float,
    "t3_translation": float,
    "t3_rotation_deg": float,
    "seed": int,
    "method_label": str,
}


def _parse(section, key, caster):
    raw = section[key]
    if caster is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return caster(raw)


def load_config(path: str | Path) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = ScenarioConfig()
    known = {
        "world": _WORLD_KEYS,
        "gallery": _GALLERY_KEYS,
        "conditions": _CONDITION_KEYS,
        "stack": _STACK_KEYS,
        "metrics": _METRICS_KEYS,
    }
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in known[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    try:
        w = parser["world"] if parser.has_section("world") else {}
        if "route_shape" in w:
            cfg.world.route_shape = w["route_shape"]
        if "landmark_density" in w:
            cfg.world.landmark_density = float(w["landmark_density"])
        if "seed" in w:
            cfg.world.seed = int(w["seed"])
        if "lateral_offset" in w:
            cfg.world.lateral_offset = float(w["lateral_offset"])
        if "module_period" in w:
            cfg.world.module_period = float(w["module_period"])
        if "descriptor_jitter" in w:
            cfg.world.descriptor_jitter = float(w["descriptor_jitter"])
        if "file" in w:
            cfg.world_file = w["file"]

        g = parser["gallery"] if parser.has_section("gallery") else {}
        if "spacing" in g:
            cfg.gallery_spacing = float(g["spacing"])
        intr = {}
        for name in ("focal_x", "focal_y", "principal_x", "principal_y"):
            if name in g:
                intr[name] = float(g[name])
        for name in ("width", "height"):
            if name in g:
                intr[name] = int(g[name])
        if intr:
            base = {
                f.name: getattr(cfg.intrinsics, f.name) for f in fields(CameraIntrinsics)
            }
            base.update(intr)
            cfg.intrinsics = CameraIntrinsics(**base)
        if "file" in g:
            cfg.gallery_file = g["file"]

        c = parser["conditions"] if parser.has_section("conditions") else {}
        cond_kwargs = {}
        if "illumination_k" in c:
            cond_kwargs["illumination_k"] = int(c["illumination_k"])
        if "visual_range" in c and c["visual_range"].strip():
            cond_kwargs["visual_range_v"] = float(c["visual_range"])
        if "camera_offset_z" in c:
            cond_kwargs["camera_offset_z"] = float(c["camera_offset_z"])
        if "camera_pitch_theta" in c:
            cond_kwargs["camera_pitch_theta"] = float(c["camera_pitch_theta"])
        if "rain" in c:
            cond_kwargs["rain"] = _parse(c, "rain", bool)
        if cond_kwargs:
            cfg.condition = EnvironmentCondition(**cond_kwargs)
        deg_kwargs = {}
        for name in (
            "dropout_max",
            "descriptor_sigma_max",
            "pixel_sigma",
            "fog_falloff_fraction",
            "view_angle_sigma_scale",
            "rain_pixel_sigma",
        ):
            if name in c:
                deg_kwargs[name] = float(c[name])
        if deg_kwargs:
            base = {f.name: getattr(cfg.degradation, f.name) for f in fields(DegradationModel)}
            base.update(deg_kwargs)
            cfg.degradation = DegradationModel(**base)

        s = parser["stack"] if parser.has_section("stack") else {}
        stack_kwargs = {}
        for name, caster in _STACK_KEYS.items():
            if name.startswith(("lateral_", "longitudinal_")):
                continue
            if name in s:
                stack_kwargs[name] = caster(s[name])
        lat = {
            "kp": DEFAULT_LATERAL_GAINS.kp,
            "ki": DEFAULT_LATERAL_GAINS.ki,
            "kd": DEFAULT_LATERAL_GAINS.kd,
            "integral_limit": DEFAULT_LATERAL_GAINS.integral_limit,
            "output_limit": DEFAULT_LATERAL_GAINS.output_limit,
        }
        lon = {
            "kp": DEFAULT_LONGITUDINAL_GAINS.kp,
            "ki": DEFAULT_LONGITUDINAL_GAINS.ki,
            "kd": DEFAULT_LONGITUDINAL_GAINS.kd,
            "integral_limit": DEFAULT_LONGITUDINAL_GAINS.integral_limit,
            "output_limit": DEFAULT_LONGITUDINAL_GAINS.output_limit,
        }
        for prefix, target in (("lateral_", lat), ("longitudinal_", lon)):
            for gain_key in ("kp", "ki", "kd", "integral_limit", "output_limit"):
                full = prefix + gain_key
                if full in s:
                    target[gain_key] = float(s[full])
        cfg.stack = StackParams(
            **stack_kwargs,
            lateral_gains=PidGains(**lat),
            longitudinal_gains=PidGains(**lon),
        )

        m = parser["metrics"] if parser.has_section("metrics") else {}
        met_kwargs = {}
        for name in ("episodes",):
            if name in m:
                met_kwargs[name] = int(m[name])
        for name in ("failure_lateral_threshold", "stall_timeout", "stall_min_progress"):
            if name in m:
                met_kwargs[name] = float(m[name])
        for tname in ("t1", "t2", "t3"):
            trans_key, rot_key = f"{tname}_translation", f"{tname}_rotation_deg"
            default = getattr(MetricsParams(), tname)
            pair = (
                float(m[trans_key]) if trans_key in m else default[0],
                float(m[rot_key]) if rot_key in m else default[1],
            )
            met_kwargs[tname] = pair
        cfg.metrics = MetricsParams(**met_kwargs)
        if "seed" in m:
            cfg.seed = int(m["seed"])
        if "method_label" in m:
            cfg.method_label = m["method_label"]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return cfg


def default_config_text() -> str:
    """INI text with every key at its default."""
    cfg = ScenarioConfig()
    lines = [
        "[world]",
        f"route_shape = {cfg.world.route_shape}",
        f"landmark_density = {cfg.world.landmark_density}",
        f"seed = {cfg.world.seed}",
        f"lateral_offset = {cfg.world.lateral_offset}",
        f"module_period = {cfg.world.module_period}",
        f"descriptor_jitter = {cfg.world.descriptor_jitter}",
        f"file = {cfg.world_file}",
        "",
        "[gallery]",
        f"spacing = {cfg.gallery_spacing}",
        f"focal_x = {cfg.intrinsics.focal_x}",
        f"focal_y = {cfg.intrinsics.focal_y}",
        f"principal_x = {cfg.intrinsics.principal_x}",
        f"principal_y = {cfg.intrinsics.principal_y}",
        f"width = {cfg.intrinsics.width}",
        f"height = {cfg.intrinsics.height}",
        f"file = {cfg.gallery_file}",
        "",
        "[conditions]",
        f"illumination_k = {cfg.condition.illumination_k}",
        "visual_range =",
        f"camera_offset_z = {cfg.condition.camera_offset_z}",
        f"camera_pitch_theta = {cfg.condition.camera_pitch_theta}",
        f"rain = {str(cfg.condition.rain).lower()}",
        f"dropout_max = {cfg.degradation.dropout_max}",
        f"descriptor_sigma_max = {cfg.degradation.descriptor_sigma_max}",
        f"pixel_sigma = {cfg.degradation.pixel_sigma}",
        f"fog_falloff_fraction = {cfg.degradation.fog_falloff_fraction}",
        f"view_angle_sigma_scale = {cfg.degradation.view_angle_sigma_scale}",
        f"rain_pixel_sigma = {cfg.degradation.rain_pixel_sigma}",
        "",
        "[stack]",
        f"target_speed = {cfg.stack.target_speed}",
        f"control_rate = {cfg.stack.control_rate}",
        f"localization_rate = {cfg.stack.localization_rate}",
        f"localization_latency = {cfg.stack.localization_latency}",
        f"top_k = {cfg.stack.top_k}",
        f"nn_ratio = {cfg.stack.nn_ratio}",
        f"ransac_inlier_threshold_px = {cfg.stack.ransac_inlier_threshold_px}",
        f"ransac_max_iterations = {cfg.stack.ransac_max_iterations}",
        f"ransac_confidence = {cfg.stack.ransac_confidence}",
        f"ekf_outlier_gate = {cfg.stack.ekf_outlier_gate}",
        f"ekf_measurement_sigma_xy = {cfg.stack.ekf_measurement_sigma_xy}",
        f"ekf_measurement_sigma_yaw_deg = {cfg.stack.ekf_measurement_sigma_yaw_deg}",
        f"ekf_initial_sigma_xy = {cfg.stack.ekf_initial_sigma_xy}",
        f"ekf_initial_sigma_yaw_deg = {cfg.stack.ekf_initial_sigma_yaw_deg}",
        f"odometry_position_drift_rate = {cfg.stack.odometry_position_drift_rate}",
        f"odometry_rotation_drift_rate = {cfg.stack.odometry_rotation_drift_rate}",
        f"lookahead = {cfg.stack.lookahead}",
        f"waypoint_spacing = {cfg.stack.waypoint_spacing}",
        f"wheelbase = {cfg.stack.wheelbase}",
        f"camera_height = {cfg.stack.camera_height}",
        f"lateral_kp = {cfg.stack.lateral_gains.kp}",
        f"lateral_ki = {cfg.stack.lateral_gains.ki}",
        f"lateral_kd = {cfg.stack.lateral_gains.kd}",
        f"lateral_integral_limit = {cfg.stack.lateral_gains.integral_limit}",
        f"lateral_output_limit = {cfg.stack.lateral_gains.output_limit}",
        f"longitudinal_kp = {cfg.stack.longitudinal_gains.kp}",
        f"longitudinal_ki = {cfg.stack.longitudinal_gains.ki}",
        f"longitudinal_kd = {cfg.stack.longitudinal_gains.kd}",
        f"longitudinal_integral_limit = {cfg.stack.longitudinal_gains.integral_limit}",
        f"longitudinal_output_limit = {cfg.stack.longitudinal_gains.output_limit}",
        "",
        "[metrics]",
        f"episodes = {cfg.metrics.episodes}",
        f"failure_lateral_threshold = {cfg.metrics.failure_lateral_threshold}",
        f"stall_timeout = {cfg.metrics.stall_timeout}",
        f"stall_min_progress = {cfg.metrics.stall_min_progress}",
        f"t1_translation = {cfg.metrics.t1[0]}",
        f"t1_rotation_deg = {cfg.metrics.t1[1]}",
        f"t2_translation = {cfg.metrics.t2[0]}",
        f"t2_rotation_deg = {cfg.metrics.t2[1]}",
        f"t3_translation = {cfg.metrics.t3[0]}",
        f"t3_rotation_deg = {cfg.metrics.t3[1]}",
        f"seed = {cfg.seed}",
        f"method_label = {cfg.method_label}",
        "",
    ]
    return "\n".join(lines)
