"""Synthetic environment: landmark world, routes, vehicle kinematics,
environment conditions and the two sensors (noisy wheel odometry and the
landmark-detection "camera").

The world stands in for a rendered town. Landmarks line both sides of the
route like building facades: columns of points at fixed heights, repeating
with a fixed module period. Landmarks within a module share descriptor
prototypes with a small per-instance jitter, so under heavy appearance
degradation different modules become mutually confusable (perceptual
aliasing), while under pristine conditions every instance is separable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .geometry import CameraIntrinsics, Pose, matrix_to_quat, quat_from_yaw
from .rng import stream

WORLD_SCHEMA_VERSION = 1

DESCRIPTOR_DIM = 64


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]; exact no-op for angles already in range."""
    if -np.pi < a <= np.pi:
        return a
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if w == -np.pi else w


def condition_value(base_value: float, k: int) -> float:
    """Geometric dimming: each level halves the previous one."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return base_value * 0.5**k


@dataclass
class Route:
    """Piecewise-linear centerline with per-vertex headings."""

    waypoints: list  # [(np.ndarray (2,), heading rad), ...]
    total_length: float

    def __post_init__(self) -> None:
        pts = self.points()
        if len(pts) < 2:
            raise InvalidSpec("route needs >= 2 waypoints")
        seg = np.diff(pts, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        if np.any(lengths < 1e-9):
            raise InvalidSpec("consecutive route waypoints coincide")
        if abs(float(np.sum(lengths)) - self.total_length) > 1e-6:
            raise InvalidSpec("total_length does not match polyline length")
        self._cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self._pts = pts
        self._seg = seg
        self._seg_len = lengths

    def points(self) -> np.ndarray:
        return np.array([p for p, _ in self.waypoints], dtype=float)

    def cumulative_arcs(self) -> np.ndarray:
        return self._cum

    def point_at(self, s: float) -> tuple[np.ndarray, float]:
        """Position and heading at arc length s (clamped to the route)."""
        s = min(max(s, 0.0), self.total_length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg) - 1)
        frac = (s - self._cum[i]) / self._seg_len[i]
        pos = self._pts[i] + frac * self._seg[i]
        heading = float(np.arctan2(self._seg[i, 1], self._seg[i, 0]))
        return pos, heading

    def project(self, xy: np.ndarray) -> tuple[float, float]:
        """Project a planar point onto the route.

        Returns (arc length of the closest point, unsigned lateral distance).
        """
        p = np.asarray(xy, dtype=float)
        rel = p - self._pts[:-1]
        t = np.einsum("ij,ij->i", rel, self._seg) / self._seg_len**2
        t = np.clip(t, 0.0, 1.0)
        closest = self._pts[:-1] + t[:, None] * self._seg
        d = np.linalg.norm(closest - p, axis=1)
        i = int(np.argmin(d))
        return float(self._cum[i] + t[i] * self._seg_len[i]), float(d[i])


def _polyline_route(vertices: np.ndarray) -> Route:
    seg = np.diff(vertices, axis=0)
    headings = np.arctan2(seg[:, 1], seg[:, 0])
    wps = [(vertices[i].copy(), float(headings[min(i, len(headings) - 1)])) for i in range(len(vertices))]
    total = float(np.sum(np.linalg.norm(seg, axis=1)))
    return Route(wps, total)


def _rectilinear_vertices(segment_lengths: list[float], turns: list[int]) -> np.ndarray:
    """Axis-aligned course: start east, turn left (+1) or right (-1) 90 deg
    between segments."""
    heading = 0.0
    pos = np.zeros(2)
    verts = [pos.copy()]
    for i, length in enumerate(segment_lengths):
        pos = pos + length * np.array([np.cos(heading), np.sin(heading)])
        verts.append(pos.copy())
        if i < len(turns):
            heading += turns[i] * np.pi / 2
    return np.array(verts)


def _round_corners(vertices: np.ndarray, radius: float, chord: float = 1.5) -> np.ndarray:
    """Replace interior corners by sampled arcs of the given radius, like a
    road curve; straight legs are kept exact."""
    out = [vertices[0]]
    for i in range(1, len(vertices) - 1):
        prev_pt, corner, next_pt = vertices[i - 1], vertices[i], vertices[i + 1]
        d_in = corner - prev_pt
        d_in = d_in / np.linalg.norm(d_in)
        d_out = next_pt - corner
        d_out = d_out / np.linalg.norm(d_out)
        turn = np.arctan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], d_in @ d_out)
        if abs(turn) < 1e-9:
            out.append(corner)
            continue
        setback = radius * np.tan(abs(turn) / 2)
        t1 = corner - d_in * setback
        normal_in = np.array([-d_in[1], d_in[0]]) * np.sign(turn)
        center = t1 + normal_in * radius
        a0 = np.arctan2(*(t1 - center)[::-1])
        n_pts = max(2, int(np.ceil(radius * abs(turn) / chord)))
        out.append(t1)
        for j in range(1, n_pts):
            a = a0 + turn * j / n_pts
            out.append(center + radius * np.array([np.cos(a), np.sin(a)]))
        out.append(corner + d_out * setback)
    out.append(vertices[-1])
    return np.array(out)


CORNER_RADIUS = 4.0

# Courses are rectilinear (corners rounded at road scale) so parallel legs
# stay far apart relative to the failure threshold.
ROUTE_SHAPES = {
    # 1.2 km, five 90 degree turns
    "long_course": ([300.0, 200.0, 250.0, 150.0, 200.0, 100.0], [1, -1, 1, 1, 1], 1200.0),
    # 0.5 km, six turns
    "short_course": ([100.0, 60.0, 80.0, 60.0, 80.0, 60.0, 60.0], [1, -1, 1, 1, -1, 1], 500.0),
}


def make_route(shape: str) -> Route:
    if shape not in ROUTE_SHAPES:
        raise InvalidSpec(f"unknown route shape {shape!r}; options: {sorted(ROUTE_SHAPES)}")
    lengths, turns, target = ROUTE_SHAPES[shape]
    verts = _round_corners(_rectilinear_vertices(lengths, turns), CORNER_RADIUS)
    # corner rounding shortens the path; pad the final leg back to the target
    seg = np.diff(verts, axis=0)
    total = float(np.sum(np.linalg.norm(seg, axis=1)))
    pad = target - total
    if pad > 1e-9:
        direction = seg[-1] / np.linalg.norm(seg[-1])
        verts[-1] = verts[-1] + direction * pad
    return _polyline_route(verts)


@dataclass
class Landmark:
    id: int
    position: np.ndarray
    canonical_descriptor: np.ndarray
    facing: np.ndarray


@dataclass
class WorldSpec:
    route_shape: str = "long_course"
    landmark_density: float = 6.0  # landmarks per meter of route, both sides
    seed: int = 0
    lateral_offset: float = 8.0  # facade distance from the centerline
    module_period: float = 16.0  # facade repetition period along the route
    column_heights: tuple = (1.0, 2.6, 4.2, 5.8, 7.4)
    descriptor_jitter: float = 0.35  # per-instance deviation from the prototype
    descriptor_dim: int = DESCRIPTOR_DIM


@dataclass
class WorldMap:
    landmarks: list
    route: Route
    seed: int
    spec: WorldSpec = field(default_factory=WorldSpec)

    def __post_init__(self) -> None:
        ids = [lm.id for lm in self.landmarks]
        if len(ids) != len(set(ids)):
            raise InvalidSpec("landmark ids must be unique")
        self._refresh_arrays()

    def _refresh_arrays(self) -> None:
        n = len(self.landmarks)
        self.positions = np.array([lm.position for lm in self.landmarks]).reshape(n, 3)
        self.facings = np.array([lm.facing for lm in self.landmarks]).reshape(n, 3)
        self.descriptors = np.array(
            [lm.canonical_descriptor for lm in self.landmarks]
        ).reshape(n, -1)
        self.ids = np.array([lm.id for lm in self.landmarks], dtype=int)


def generate_world(spec: WorldSpec) -> WorldMap:
    """Deterministic landmark world along a generated route.

    Facade columns stand at a regular arc step on both sides of the road,
    facing it. Column step and height count are tied so that the landmark
    count matches ``landmark_density`` per meter of route.
    """
    if spec.landmark_density <= 0:
        raise InvalidSpec("landmark density must be positive")
    route = make_route(spec.route_shape)

    n_heights = len(spec.column_heights)
    column_step = 2.0 * n_heights / spec.landmark_density  # per side
    columns_per_module = max(1, int(round(spec.module_period / column_step)))
    rng_proto = stream(spec.seed, "landmark-prototypes")
    rng_jitter = stream(spec.seed, "landmark-jitter")

    # prototype descriptors: one per (side, column-in-module, height)
    n_classes = 2 * columns_per_module * n_heights
    prototypes = rng_proto.normal(size=(n_classes, spec.descriptor_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    landmarks: list[Landmark] = []
    next_id = 0
    n_columns = int(route.total_length / column_step)
    for side_idx, side in enumerate((-1.0, 1.0)):
        for col in range(n_columns):
            s = (col + 0.5) * column_step
            center, heading = route.point_at(s)
            normal = np.array([-np.sin(heading), np.cos(heading)])  # left of travel
            base = center + side * spec.lateral_offset * normal
            facing3 = np.array([-side * normal[0], -side * normal[1], 0.0])
            col_class = col % columns_per_module
            for h_idx, h in enumerate(spec.column_heights):
                cls = (side_idx * columns_per_module + col_class) * n_heights + h_idx
                jitter = rng_jitter.normal(size=spec.descriptor_dim)
                jitter *= spec.descriptor_jitter / np.linalg.norm(jitter)
                desc = prototypes[cls] + jitter
                desc /= np.linalg.norm(desc)
                landmarks.append(
                    Landmark(
                        id=next_id,
                        position=np.array([base[0], base[1], h]),
                        canonical_descriptor=desc,
                        facing=facing3,
                    )
                )
                next_id += 1
    return WorldMap(landmarks=landmarks, route=route, seed=spec.seed, spec=spec)


# ------------------------------------------------------------------ vehicle


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    speed: float = 0.0

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


WHEELBASE = 2.5
MAX_ACCELERATION = 3.0  # m/s^2 at full throttle


def step_vehicle(
    state: VehicleState,
    steer: float,
    throttle: float,
    dt: float,
    wheelbase: float = WHEELBASE,
) -> VehicleState:
    """Kinematic bicycle update (forward Euler on the current state)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.x + state.speed * np.cos(state.yaw) * dt
    y = state.y + state.speed * np.sin(state.yaw) * dt
    yaw = wrap_angle(state.yaw + state.speed * np.tan(steer) / wheelbase * dt)
    speed = max(0.0, state.speed + MAX_ACCELERATION * throttle * dt)
    return VehicleState(x=x, y=y, yaw=yaw, speed=speed)


def vehicle_pose(state: VehicleState) -> Pose:
    """6-DoF pose of the vehicle body (forward = +x at zero yaw)."""
    return Pose(np.array([state.x, state.y, 0.0]), quat_from_yaw(state.yaw))


# ----------------------------------------------------------------- odometry


@dataclass
class OdometryNoiseModel:
    position_drift_rate: float = 0.085  # fraction of distance at the reference length
    rotation_drift_rate: float = 0.4  # deg per meter at the reference length
    step_sigma_translation: float = 0.0  # meters per step
    step_sigma_yaw: float = 0.0  # radians per step


@dataclass
class OdometryDelta:
    delta_translation: np.ndarray  # body frame of the previous pose, (2,)
    delta_yaw: float


REFERENCE_DRIFT_DISTANCE = 100.0


def calibrate_odometry(
    target_position_rate: float,
    target_rotation_rate_deg_per_m: float,
    step_length: float,
) -> OdometryNoiseModel:
    """Per-step sigmas whose random-walk accumulation reaches the target
    mean drift at the 100 m reference distance.

    For a half-normal terminal error, mean = sigma * sqrt(n) * sqrt(2/pi),
    so sigma = rate * sqrt(L_ref * step) * sqrt(pi/2).
    """
    if target_position_rate < 0 or target_rotation_rate_deg_per_m < 0:
        raise ValueError("drift targets must be non-negative")
    if step_length <= 0:
        raise ValueError("step_length must be positive")
    scale = np.sqrt(REFERENCE_DRIFT_DISTANCE * step_length) * np.sqrt(np.pi / 2.0)
    return OdometryNoiseModel(
        position_drift_rate=target_position_rate,
        rotation_drift_rate=target_rotation_rate_deg_per_m,
        step_sigma_translation=target_position_rate * scale,
        step_sigma_yaw=np.radians(target_rotation_rate_deg_per_m) * scale,
    )


def sample_odometry(
    truth_prev: VehicleState,
    truth_curr: VehicleState,
    model: OdometryNoiseModel,
    rng: np.random.Generator,
) -> OdometryDelta:
    """Noisy body-frame increment between two true states.

    Noise enters the translation magnitude (along the direction of motion)
    and the yaw increment; a stationary vehicle reports a clean zero.
    """
    dx = truth_curr.x - truth_prev.x
    dy = truth_curr.y - truth_prev.y
    c, s = np.cos(truth_prev.yaw), np.sin(truth_prev.yaw)
    body = np.array([c * dx + s * dy, -s * dx + c * dy])
    dyaw = wrap_angle(truth_curr.yaw - truth_prev.yaw)
    dist = float(np.linalg.norm(body))
    if dist > 1e-12:
        if model.step_sigma_translation > 0:
            body = body + (body / dist) * rng.normal(0.0, model.step_sigma_translation)
        if model.step_sigma_yaw > 0:
            dyaw = wrap_angle(dyaw + rng.normal(0.0, model.step_sigma_yaw))
    return OdometryDelta(delta_translation=body, delta_yaw=dyaw)


# -------------------------------------------------------------- conditions


@dataclass
class EnvironmentCondition:
    illumination_k: int = 0
    visual_range_v: float | None = None  # meters; None = unlimited
    camera_offset_z: float = 0.0
    camera_pitch_theta: float = 0.0  # degrees, downward
    rain: bool = False

    def __post_init__(self) -> None:
        if not (0 <= self.illumination_k <= 10):
            raise InvalidSpec("illumination_k must be in [0, 10]")
        if self.visual_range_v is not None and self.visual_range_v <= 0:
            raise InvalidSpec("visual_range_v must be positive when present")
        if not (0 <= self.camera_pitch_theta < 90):
            raise InvalidSpec("camera_pitch_theta must be in [0, 90)")


@dataclass
class DegradationModel:
    dropout_max: float = 0.95  # detection loss at full darkness
    descriptor_sigma_max: float = 0.105  # per-dimension noise at full darkness
    pixel_sigma: float = 0.4  # px
    fog_falloff_fraction: float = 0.6  # certain detection inside this fraction of v
    view_angle_sigma_scale: float = 0.02  # descriptor noise per radian off the facade normal
    rain_pixel_sigma: float = 0.5  # extra pixel noise when rain is on

    def __post_init__(self) -> None:
        if not (0.0 <= self.dropout_max <= 1.0):
            raise InvalidSpec("dropout_max must be in [0, 1]")
        if not (0.0 < self.fog_falloff_fraction <= 1.0):
            raise InvalidSpec("fog_falloff_fraction must be in (0, 1]")
        for name in ("descriptor_sigma_max", "pixel_sigma", "view_angle_sigma_scale", "rain_pixel_sigma"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative")


@dataclass
class CameraMount:
    height: float = 1.6  # base camera height above ground
    offset_z: float = 0.0  # experiment elevation shift
    pitch_theta: float = 0.0  # degrees, downward pitch


def _mount_rotation(yaw: float, pitch_theta_deg: float) -> np.ndarray:
    """Camera rotation (camera->world) for a right-pointing mounted camera.

    Optical axis points 90 deg right of the vehicle heading, pitched down by
    theta; image x runs against the travel direction, image y points down.
    """
    theta = np.radians(pitch_theta_deg)
    x_c = np.array([-1.0, 0.0, 0.0])
    z_c = np.array([0.0, -np.cos(theta), -np.sin(theta)])
    y_c = np.cross(z_c, x_c)
    r0 = np.column_stack([x_c, y_c, z_c])
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    return rz @ r0


def mounted_camera_pose(vehicle: VehicleState, mount: CameraMount) -> Pose:
    r = _mount_rotation(vehicle.yaw, mount.pitch_theta)
    t = np.array([vehicle.x, vehicle.y, mount.height + mount.offset_z])
    return Pose(t, matrix_to_quat(r))


def vehicle_pose_from_camera(camera_pose: Pose, mount: CameraMount) -> tuple[float, float, float]:
    """Invert the mount: planar (x, y, yaw) of the vehicle carrying the camera."""
    r0 = _mount_rotation(0.0, mount.pitch_theta)
    rz = camera_pose.matrix() @ r0.T
    yaw = float(np.arctan2(rz[1, 0], rz[0, 0]))
    return float(camera_pose.translation[0]), float(camera_pose.translation[1]), yaw


# ------------------------------------------------------------- observation


@dataclass
class QueryObservation:
    timestamp: float
    pixels: np.ndarray  # (M, 2)
    descriptors: np.ndarray  # (M, D)
    debug_landmark_ids: np.ndarray  # (M,) ground truth, never read by localization
    camera_pose_truth: Pose

    def __len__(self) -> int:
        return len(self.pixels)


def observe(
    world: WorldMap,
    camera_pose: Pose,
    intrinsics: CameraIntrinsics,
    condition: EnvironmentCondition,
    degradation: DegradationModel,
    rng: np.random.Generator,
    timestamp: float = 0.0,
) -> QueryObservation:
    """Synthetic image capture: landmark detections under the current
    environment condition.

    A landmark is detected iff it projects in front of the camera inside the
    image, faces the camera, survives fog gating and illumination dropout.
    Detected pixels and descriptors carry condition-dependent noise.
    """
    r_wc = camera_pose.matrix()
    cam = camera_pose.translation
    local = (world.positions - cam) @ r_wc
    z = local[:, 2]
    mask = z > 1e-9
    zs = np.where(mask, z, 1.0)
    u = intrinsics.focal_x * local[:, 0] / zs + intrinsics.principal_x
    v = intrinsics.focal_y * local[:, 1] / zs + intrinsics.principal_y
    mask &= (u >= 0) & (u < intrinsics.width) & (v >= 0) & (v < intrinsics.height)

    rel = world.positions - cam
    dist = np.linalg.norm(rel, axis=1)
    view_dir = rel / np.maximum(dist, 1e-12)[:, None]
    facing_dot = np.einsum("ij,ij->i", world.facings, view_dir)
    mask &= facing_dot < 0  # the facade front faces the camera

    dim = 1.0 - condition_value(1.0, condition.illumination_k)  # 1 - 0.5^k

    if condition.visual_range_v is not None:
        vr = condition.visual_range_v
        inner = degradation.fog_falloff_fraction * vr
        p_fog = np.clip((vr - dist) / max(vr - inner, 1e-12), 0.0, 1.0)
        p_fog[dist <= inner] = 1.0
        p_fog[dist >= vr] = 0.0
        need_draw = mask & (p_fog < 1.0)
        if np.any(need_draw):
            draws = rng.uniform(size=int(np.count_nonzero(need_draw)))
            keep = np.ones(len(mask), dtype=bool)
            keep[need_draw] = draws < p_fog[need_draw]
            mask &= keep

    p_drop = degradation.dropout_max * dim
    if p_drop > 0 and np.any(mask):
        draws = rng.uniform(size=int(np.count_nonzero(mask)))
        keep = np.ones(len(mask), dtype=bool)
        keep[mask] = draws >= p_drop
        mask &= keep

    idx = np.flatnonzero(mask)
    pixels = np.stack([u[idx], v[idx]], axis=1)

    pixel_sigma = degradation.pixel_sigma + (degradation.rain_pixel_sigma if condition.rain else 0.0)
    if pixel_sigma > 0 and len(idx):
        pixels = pixels + rng.normal(0.0, pixel_sigma, size=pixels.shape)
        inb = (
            (pixels[:, 0] >= 0)
            & (pixels[:, 0] < intrinsics.width)
            & (pixels[:, 1] >= 0)
            & (pixels[:, 1] < intrinsics.height)
        )
        idx = idx[inb]
        pixels = pixels[inb]

    view_angle = np.arccos(np.clip(-facing_dot[idx], -1.0, 1.0))
    sigma = degradation.descriptor_sigma_max * dim + degradation.view_angle_sigma_scale * view_angle
    descriptors = world.descriptors[idx].copy()
    if len(idx) and np.any(sigma > 0):
        descriptors = descriptors + rng.normal(size=descriptors.shape) * sigma[:, None]
        descriptors /= np.linalg.norm(descriptors, axis=1, keepdims=True)

    return QueryObservation(
        timestamp=timestamp,
        pixels=pixels,
        descriptors=descriptors,
        debug_landmark_ids=world.ids[idx].copy(),
        camera_pose_truth=camera_pose,
    )


# ------------------------------------------------------------- persistence


def save_world(world: WorldMap, path: str | Path) -> None:
    payload = {
        "schema_version": WORLD_SCHEMA_VERSION,
        "seed": world.seed,
        "spec": {
            "route_shape": world.spec.route_shape,
            "landmark_density": world.spec.landmark_density,
            "seed": world.spec.seed,
            "lateral_offset": world.spec.lateral_offset,
            "module_period": world.spec.module_period,
            "column_heights": list(world.spec.column_heights),
            "descriptor_jitter": world.spec.descriptor_jitter,
            "descriptor_dim": world.spec.descriptor_dim,
        },
        "route": {
            "waypoints": [[list(map(float, p)), float(h)] for p, h in world.route.waypoints],
            "total_length": world.route.total_length,
        },
        "landmarks": [
            {
                "id": int(lm.id),
                "position": [float(x) for x in lm.position],
                "descriptor": [float(x) for x in lm.canonical_descriptor],
                "facing": [float(x) for x in lm.facing],
            }
            for lm in world.landmarks
        ],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_world(path: str | Path) -> WorldMap:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema_version") != WORLD_SCHEMA_VERSION:
        raise InvalidSpec(f"unsupported world schema {payload.get('schema_version')}")
    spec = WorldSpec(**{**payload["spec"], "column_heights": tuple(payload["spec"]["column_heights"])})
    route = Route(
        [(np.array(p), h) for p, h in payload["route"]["waypoints"]],
        payload["route"]["total_length"],
    )
    landmarks = [
        Landmark(
            id=e["id"],
            position=np.array(e["position"]),
            canonical_descriptor=np.array(e["descriptor"]),
            facing=np.array(e["facing"]),
        )
        for e in payload["landmarks"]
    ]
    return WorldMap(landmarks=landmarks, route=route, seed=payload["seed"], spec=spec)
