"""Pure 3D geometry: poses, pinhole projection, triangulation, P3P and
robust RANSAC pose estimation.

Conventions
-----------
* A ``Pose`` maps points from its local frame into the world frame:
  ``x_world = R(q) @ x_local + t``. For a camera pose, the local frame is
  the optical frame (x right, y down, z forward along the optical axis).
* Quaternions are stored ``[w, x, y, z]`` with unit norm.
* Pixels are ``(u, v)`` with u along image x and v along image y.

All functions are pure; identical inputs (including RANSAC seeds) produce
identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGeometry,
    InsufficientCorrespondences,
    InsufficientObservations,
    NoConsensus,
)
from .rng import stream

_UNIT_TOL = 1e-9


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(q))
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; numerically stable for all rotations."""
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return _quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)])


@dataclass
class Pose:
    """Rigid transform from a local frame to the world frame."""

    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion [w, x, y, z]

    def __post_init__(self) -> None:
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        self.rotation = _quat_normalize(q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_rt(rotation_matrix: np.ndarray, translation: np.ndarray) -> "Pose":
        return Pose(np.asarray(translation, dtype=float), matrix_to_quat(np.asarray(rotation_matrix, dtype=float)))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        r = quat_multiply(self.rotation, other.rotation)
        t = self.translation + self.matrix() @ other.translation
        return Pose(t, r)

    def inverse(self) -> "Pose":
        q_inv = quat_conjugate(self.rotation)
        t_inv = -(quat_to_matrix(q_inv) @ self.translation)
        return Pose(t_inv, q_inv)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Local frame -> world frame for (3,) or (N, 3) arrays."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix().T + self.translation

    def transform_inverse(self, points: np.ndarray) -> np.ndarray:
        """World frame -> local frame."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation) @ self.matrix()


@dataclass
class CameraIntrinsics:
    focal_x: float = 400.0
    focal_y: float = 400.0
    principal_x: float = 400.0
    principal_y: float = 300.0
    width: int = 800
    height: int = 600

    def __post_init__(self) -> None:
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.principal_x <= self.width and 0 <= self.principal_y <= self.height):
            raise ValueError("principal point outside image bounds")

    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.focal_x, 0.0, self.principal_x],
                [0.0, self.focal_y, self.principal_y],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass
class Correspondence2D3D:
    pixel: np.ndarray
    point: np.ndarray
    landmark_id: int

    def __post_init__(self) -> None:
        self.pixel = np.asarray(self.pixel, dtype=float).reshape(2)
        self.point = np.asarray(self.point, dtype=float).reshape(3)


@dataclass
class PoseError:
    translation_error: float
    rotation_error: float  # degrees

    def within(self, max_translation: float, max_rotation_deg: float) -> bool:
        return self.translation_error < max_translation and self.rotation_error < max_rotation_deg


@dataclass
class RansacParams:
    inlier_threshold_px: float = 4.0
    max_iterations: int = 1000
    confidence: float = 0.99
    seed: int = 0
    min_inliers: int = 4

    def __post_init__(self) -> None:
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier_threshold_px must be positive")


@dataclass
class RansacResult:
    pose: Pose
    inlier_ids: list = field(default_factory=list)
    inlier_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


def project(camera_pose: Pose, intrinsics: CameraIntrinsics, point: np.ndarray) -> np.ndarray | None:
    """Pinhole projection of a world point; None when behind the camera or
    outside the image."""
    local = camera_pose.transform_inverse(np.asarray(point, dtype=float))
    z = local[2]
    if z <= 1e-12:
        return None
    u = intrinsics.focal_x * local[0] / z + intrinsics.principal_x
    v = intrinsics.focal_y * local[1] / z + intrinsics.principal_y
    if not (0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height):
        return None
    return np.array([u, v])


def project_batch(
    camera_pose: Pose, intrinsics: CameraIntrinsics, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns (pixels (N,2), valid mask (N,))."""
    local = camera_pose.transform_inverse(points)
    z = local[:, 2]
    valid = z > 1e-12
    zs = np.where(valid, z, 1.0)
    u = intrinsics.focal_x * local[:, 0] / zs + intrinsics.principal_x
    v = intrinsics.focal_y * local[:, 1] / zs + intrinsics.principal_y
    valid &= (u >= 0.0) & (u < intrinsics.width) & (v >= 0.0) & (v < intrinsics.height)
    return np.stack([u, v], axis=1), valid


def _reprojection_errors_rt(
    r_cw: np.ndarray,
    t_cw: np.ndarray,
    intrinsics: CameraIntrinsics,
    points: np.ndarray,
    pixels: np.ndarray,
) -> np.ndarray:
    """Pixel distance per correspondence for a world->camera transform;
    inf for points at/behind the camera."""
    local = points @ r_cw.T + t_cw
    z = local[:, 2]
    ok = z > 1e-12
    zs = np.where(ok, z, 1.0)
    u = intrinsics.focal_x * local[:, 0] / zs + intrinsics.principal_x
    v = intrinsics.focal_y * local[:, 1] / zs + intrinsics.principal_y
    err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
    err[~ok] = np.inf
    return err


def _reprojection_errors(
    pose: Pose, intrinsics: CameraIntrinsics, points: np.ndarray, pixels: np.ndarray
) -> np.ndarray:
    r_cw = pose.matrix().T
    return _reprojection_errors_rt(r_cw, -(r_cw @ pose.translation), intrinsics, points, pixels)


def _bearings(pixels: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Unit rays in the camera frame for (N, 2) pixels."""
    x = (pixels[:, 0] - intrinsics.principal_x) / intrinsics.focal_x
    y = (pixels[:, 1] - intrinsics.principal_y) / intrinsics.focal_y
    rays = np.stack([x, y, np.ones_like(x)], axis=1)
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def triangulate(
    observations: list[tuple[Pose, np.ndarray]],
    intrinsics: CameraIntrinsics,
    refine: bool = True,
) -> np.ndarray:
    """Least-squares 3D point from >= 2 (camera pose, pixel) observations.

    A linear DLT solution is refined by Gauss-Newton on the reprojection
    residuals, so the result minimizes pixel error rather than the
    algebraic error.
    """
    if len(observations) < 2:
        raise InsufficientObservations(f"need >= 2 observations, got {len(observations)}")
    centers = np.array([p.translation for p, _ in observations])
    spread = np.max(np.linalg.norm(centers - centers[0], axis=1))
    if spread < 1e-9:
        raise DegenerateGeometry("all camera centers coincide (zero baseline)")

    rows_a = []
    rows_b = []
    for pose, pixel in observations:
        r_cw = pose.matrix().T  # world -> camera
        t_cw = -r_cw @ pose.translation
        xn = (pixel[0] - intrinsics.principal_x) / intrinsics.focal_x
        yn = (pixel[1] - intrinsics.principal_y) / intrinsics.focal_y
        rows_a.append(xn * r_cw[2] - r_cw[0])
        rows_b.append(-(xn * t_cw[2] - t_cw[0]))
        rows_a.append(yn * r_cw[2] - r_cw[1])
        rows_b.append(-(yn * t_cw[2] - t_cw[1]))
    a = np.array(rows_a)
    b = np.array(rows_b)
    svals = np.linalg.svd(a, compute_uv=False)
    if svals[2] < 1e-9 * max(svals[0], 1.0):
        raise DegenerateGeometry("rays are near-parallel")
    point, *_ = np.linalg.lstsq(a, b, rcond=None)

    if refine:
        point = _refine_point_gn(point, observations, intrinsics)
    return point


def _refine_point_gn(
    point: np.ndarray,
    observations: list[tuple[Pose, np.ndarray]],
    intrinsics: CameraIntrinsics,
    max_iterations: int = 10,
    step_tol: float = 1e-12,
) -> np.ndarray:
    fx, fy = intrinsics.focal_x, intrinsics.focal_y
    for _ in range(max_iterations):
        jac = []
        res = []
        for pose, pixel in observations:
            r_cw = pose.matrix().T
            local = r_cw @ (point - pose.translation)
            x, y, z = local
            if z <= 1e-9:
                return point  # refinement left the valid region; keep linear result
            u = fx * x / z + intrinsics.principal_x
            v = fy * y / z + intrinsics.principal_y
            d_proj = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
            jac.append(d_proj @ r_cw)
            res.append([u - pixel[0], v - pixel[1]])
        jac = np.vstack(jac)
        res = np.concatenate(res)
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        point = point + step
        if np.linalg.norm(step) < step_tol:
            break
    return point


def solve_p3p(
    correspondences: list[Correspondence2D3D], intrinsics: CameraIntrinsics
) -> list[Pose]:
    """Minimal three-point pose solver; up to four candidate camera poses.

    Solves for the three point-camera distances through the classical
    quartic formulation, recovers each pose by rigid alignment of the
    camera-frame points with the world points, and polishes with a few
    Gauss-Newton steps so every returned pose reprojects the inputs to
    within 1e-6 px.
    """
    if len(correspondences) != 3:
        raise InsufficientCorrespondences("P3P needs exactly 3 correspondences")
    pts = np.array([c.point for c in correspondences])
    pix = np.array([c.pixel for c in correspondences])
    poses: list[Pose] = []
    for r_cw, t_cw in _solve_p3p_rt(pts, pix, intrinsics):
        r_cw, t_cw = _refine_rt_gn(r_cw, t_cw, pts, pix, intrinsics, max_iterations=10)
        errs = _reprojection_errors_rt(r_cw, t_cw, intrinsics, pts, pix)
        if np.max(errs) >= 1e-6:
            continue
        r_wc = r_cw.T
        pose = Pose.from_rt(r_wc, -r_wc @ t_cw)
        if not _pose_in(poses, pose):
            poses.append(pose)
    return poses


def _solve_p3p_rt(
    pts: np.ndarray, pix: np.ndarray, intrinsics: CameraIntrinsics
) -> list[tuple[np.ndarray, np.ndarray]]:
    """P3P candidates as raw world->camera (R, t) pairs, without polish."""
    d12 = pts[1] - pts[0]
    d13 = pts[2] - pts[0]
    cross = np.cross(d12, d13)
    scale = max(np.sqrt(d12 @ d12), np.sqrt(d13 @ d13), 1e-12)
    if np.sqrt(cross @ cross) < 1e-9 * scale**2:
        raise DegenerateGeometry("3D points are collinear")

    rays = _bearings(pix, intrinsics)
    j1, j2, j3 = rays
    p1, p2, p3 = pts
    d23 = p2 - p3
    d13b = p1 - p3
    a2 = float(d23 @ d23)
    b2 = float(d13b @ d13b)
    c2 = float(d12 @ d12)
    b = np.sqrt(b2)
    cos_alpha = float(j2 @ j3)
    cos_beta = float(j1 @ j3)
    cos_gamma = float(j1 @ j2)

    # With s2 = u*s1, s3 = v*s1 the law of cosines yields two quadrics in
    # (u, v); eliminating u gives a quartic in v. The products below are the
    # hand-convolved coefficient arrays (lowest order first).
    big_a = a2 / b2
    big_c = c2 / b2
    # q(v) = 1 - 2 cosβ v + v², n(v) = (A - C) q(v) + (1 - v²), d(v) linear
    ac = big_a - big_c
    n0, n1, n2 = ac + 1.0, -2.0 * cos_beta * ac, ac - 1.0
    d0, d1 = 2.0 * cos_gamma, -2.0 * cos_alpha
    e0, e1, e2 = 1.0 - big_c, 2.0 * cos_beta * big_c, -big_c
    # quartic = n² - 2 cosγ n d + e d²  (degree 4 in v)
    q0 = n0 * n0 - 2.0 * cos_gamma * n0 * d0 + e0 * d0 * d0
    q1 = (
        2.0 * n0 * n1
        - 2.0 * cos_gamma * (n0 * d1 + n1 * d0)
        + e0 * 2.0 * d0 * d1
        + e1 * d0 * d0
    )
    q2 = (
        n1 * n1
        + 2.0 * n0 * n2
        - 2.0 * cos_gamma * (n1 * d1 + n2 * d0)
        + e0 * d1 * d1
        + e1 * 2.0 * d0 * d1
        + e2 * d0 * d0
    )
    q3 = 2.0 * n1 * n2 - 2.0 * cos_gamma * n2 * d1 + e1 * d1 * d1 + e2 * 2.0 * d0 * d1
    q4 = n2 * n2 + e2 * d1 * d1
    coeffs = np.array([q4, q3, q2, q1, q0])  # highest order first for np.roots
    nz = np.flatnonzero(np.abs(coeffs) > 1e-14)
    if len(nz) == 0 or len(coeffs) - nz[0] < 2:
        return []
    roots = np.roots(coeffs[nz[0] :])

    solutions = []
    for root in roots:
        if abs(root.imag) > 1e-8 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        if v <= 0:
            continue
        denom = 1.0 + v * v - 2.0 * v * cos_beta
        if denom <= 1e-14:
            continue
        s1 = b / np.sqrt(denom)
        e_val = e0 + e1 * v + e2 * v * v
        disc = cos_gamma * cos_gamma - e_val
        if disc < 0:
            continue
        sq = np.sqrt(disc)
        for u in (cos_gamma + sq, cos_gamma - sq):
            if u <= 0:
                continue
            res1 = u * u + v * v - 2.0 * u * v * cos_alpha - big_a * denom
            if abs(res1) > 1e-7 * max(1.0, big_a * denom):
                continue
            cam_pts = np.array([s1 * j1, u * s1 * j2, v * s1 * j3])
            solutions.append(_align_rt(pts, cam_pts))
    return solutions


def _pose_in(poses: list[Pose], pose: Pose) -> bool:
    for p in poses:
        if (
            np.linalg.norm(p.translation - pose.translation) < 1e-8
            and pose_error(p, pose).rotation_error < 1e-6
        ):
            return True
    return False


def _align_rt(world_pts: np.ndarray, cam_pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rigid world->camera transform from paired points (Arun's method)."""
    cw = world_pts.mean(axis=0)
    cc = cam_pts.mean(axis=0)
    h = (world_pts - cw).T @ (cam_pts - cc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r_cw = (vt.T * np.array([1.0, 1.0, d])) @ u.T
    t_cw = cc - r_cw @ cw
    return r_cw, t_cw


def _refine_rt_gn(
    r_cw: np.ndarray,
    t_cw: np.ndarray,
    points: np.ndarray,
    pixels: np.ndarray,
    intrinsics: CameraIntrinsics,
    max_iterations: int = 20,
    step_tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Newton on reprojection error over all given correspondences."""
    fx, fy = intrinsics.focal_x, intrinsics.focal_y
    n = len(points)
    jac = np.zeros((2 * n, 6))
    rows = np.arange(n)
    for _ in range(max_iterations):
        local = points @ r_cw.T + t_cw
        z = local[:, 2]
        if np.any(z <= 1e-9):
            break
        u = fx * local[:, 0] / z + intrinsics.principal_x
        v = fy * local[:, 1] / z + intrinsics.principal_y
        res = np.stack([u - pixels[:, 0], v - pixels[:, 1]], axis=1).ravel()
        # d(pixel)/d(camera point), then chain through translation and the
        # left-multiplied rotation increment
        gx = fx / z
        gy = fy / z
        hx = -fx * local[:, 0] / z**2
        hy = -fy * local[:, 1] / z**2
        jac[2 * rows, 0] = gx
        jac[2 * rows, 2] = hx
        jac[2 * rows + 1, 1] = gy
        jac[2 * rows + 1, 2] = hy
        y0, y1, y2 = (local - t_cw).T
        # rows of d_proj @ (-skew(y)) expanded
        jac[2 * rows, 3] = hx * y1
        jac[2 * rows, 4] = gx * y2 - hx * y0
        jac[2 * rows, 5] = -gx * y1
        jac[2 * rows + 1, 3] = -gy * y2 + hy * y1
        jac[2 * rows + 1, 4] = -hy * y0
        jac[2 * rows + 1, 5] = gy * y0
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        t_cw = t_cw + step[:3]
        r_cw = _exp_so3(step[3:]) @ r_cw
        if step @ step < step_tol**2:
            break
    return r_cw, t_cw


def _refine_pose_gn(
    pose: Pose,
    points: np.ndarray,
    pixels: np.ndarray,
    intrinsics: CameraIntrinsics,
    max_iterations: int = 20,
    step_tol: float = 1e-10,
) -> Pose:
    r_cw = pose.matrix().T
    r_cw, t_cw = _refine_rt_gn(
        r_cw, -(r_cw @ pose.translation), points, pixels, intrinsics, max_iterations, step_tol
    )
    r_wc = r_cw.T
    return Pose.from_rt(r_wc, -r_wc @ t_cw)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=float)


def _exp_so3(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    k = _skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def ransac_pnp(
    correspondences: list[Correspondence2D3D],
    intrinsics: CameraIntrinsics,
    params: RansacParams | None = None,
) -> RansacResult:
    """Robust pose from 2D-3D correspondences.

    Minimal P3P samples are disambiguated by a fourth correspondence, the
    consensus set is scored by reprojection distance, the iteration count
    adapts to the best inlier ratio, and the winning pose is refined by
    Gauss-Newton over its inliers. Deterministic for a fixed seed.
    """
    params = params or RansacParams()
    n = len(correspondences)
    if n < 4:
        raise InsufficientCorrespondences(f"need >= 4 correspondences, got {n}")
    points = np.array([c.point for c in correspondences])
    pixels = np.array([c.pixel for c in correspondences])
    rng = stream(params.seed, "ransac-pnp")

    best_inliers: np.ndarray | None = None
    best_count = 0
    best_err = np.inf
    max_needed = params.max_iterations
    it = 0
    while it < min(max_needed, params.max_iterations):
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            candidates = _solve_p3p_rt(points[sample[:3]], pixels[sample[:3]], intrinsics)
        except DegenerateGeometry:
            continue
        if not candidates:
            continue
        # fourth point picks the physically consistent P3P root
        probe_pt = points[sample[3] : sample[3] + 1]
        probe_px = pixels[sample[3] : sample[3] + 1]
        probe_errs = [
            _reprojection_errors_rt(r, t, intrinsics, probe_pt, probe_px)[0]
            for r, t in candidates
        ]
        r_cw, t_cw = candidates[int(np.argmin(probe_errs))]
        errs = _reprojection_errors_rt(r_cw, t_cw, intrinsics, points, pixels)
        inliers = errs < params.inlier_threshold_px
        count = int(np.count_nonzero(inliers))
        if count > best_count or (count == best_count and count > 0 and float(np.sum(errs[inliers])) < best_err):
            best_count = count
            best_inliers = inliers
            best_err = float(np.sum(errs[inliers]))
            if count >= params.min_inliers:
                w = count / n
                fail_prob = max(1e-12, 1.0 - w**4)
                max_needed = int(
                    np.ceil(np.log(max(1e-12, 1.0 - params.confidence)) / np.log(fail_prob))
                )

    if best_inliers is None or best_count < params.min_inliers:
        raise NoConsensus(f"best consensus {best_count} < {params.min_inliers}")

    # refine over the consensus set, then recompute the final inlier set
    idx = np.flatnonzero(best_inliers)
    pose = _fit_pose(points[idx], pixels[idx], intrinsics)
    errs = _reprojection_errors(pose, intrinsics, points, pixels)
    final = errs < params.inlier_threshold_px
    if int(np.count_nonzero(final)) < params.min_inliers:
        final = best_inliers  # refinement degraded; fall back to consensus fit
        pose = _fit_pose(points[idx], pixels[idx], intrinsics, refit=False)
        errs = _reprojection_errors(pose, intrinsics, points, pixels)
        final = errs < params.inlier_threshold_px
        if int(np.count_nonzero(final)) < params.min_inliers:
            raise NoConsensus("refinement lost consensus")
    final_idx = np.flatnonzero(final)
    assert np.all(errs[final_idx] < params.inlier_threshold_px)
    ids = [correspondences[i].landmark_id for i in final_idx]
    return RansacResult(pose=pose, inlier_ids=ids, inlier_indices=final_idx)


def _fit_pose(
    points: np.ndarray, pixels: np.ndarray, intrinsics: CameraIntrinsics, refit: bool = True
) -> Pose:
    """Pose from >= 4 correspondences: P3P on one triple, disambiguated and
    refined over the full set."""
    tri = _spread_triple(points)
    try:
        candidates = _solve_p3p_rt(points[tri], pixels[tri], intrinsics)
    except DegenerateGeometry as exc:
        raise NoConsensus("degenerate triple during refinement") from exc
    if not candidates:
        raise NoConsensus("minimal solve failed during refinement")
    scores = [
        float(np.sum(_reprojection_errors_rt(r, t, intrinsics, points, pixels) ** 2))
        for r, t in candidates
    ]
    r_cw, t_cw = candidates[int(np.argmin(scores))]
    if refit:
        r_cw, t_cw = _refine_rt_gn(r_cw, t_cw, points, pixels, intrinsics)
    r_wc = r_cw.T
    return Pose.from_rt(r_wc, -r_wc @ t_cw)


def _spread_triple(points: np.ndarray) -> list[int]:
    """Three well-separated, non-collinear point indices."""
    n = len(points)
    i0 = 0
    d = np.linalg.norm(points - points[i0], axis=1)
    i1 = int(np.argmax(d))
    base = points[i1] - points[i0]
    base_n = np.linalg.norm(base)
    if base_n < 1e-12:
        return [0, 1 % n, 2 % n]
    cross = np.linalg.norm(np.cross(base / base_n, points - points[i0]), axis=1)
    i2 = int(np.argmax(cross))
    return [i0, i1, i2]


def pose_error(estimate: Pose, truth: Pose) -> PoseError:
    """Translation distance (m) and absolute rotation angle (deg)."""
    dt = float(np.linalg.norm(estimate.translation - truth.translation))
    q_rel = quat_multiply(quat_conjugate(estimate.rotation), truth.rotation)
    w = min(1.0, abs(float(q_rel[0])))
    angle = float(np.degrees(2.0 * np.arccos(w)))
    return PoseError(translation_error=dt, rotation_error=angle)
