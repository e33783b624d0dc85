"""Hierarchical localization: gallery construction with triangulated
landmark positions, place-recognition retrieval, co-visibility clustering,
NN-ratio matching and per-cluster robust PnP.

The query side never reads ground-truth landmark identities; data
association happens purely through descriptor matching. The gallery side
does use them while building the map, standing in for the ground-truth
poses available during mapping.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, EmptyGallery, InsufficientCorrespondences, InvalidSpec, NoConsensus
from .geometry import (
    CameraIntrinsics,
    Correspondence2D3D,
    Pose,
    RansacParams,
    ransac_pnp,
    triangulate,
)
from .rng import stream
from .world import (
    CameraMount,
    DegradationModel,
    EnvironmentCondition,
    QueryObservation,
    Route,
    VehicleState,
    WorldMap,
    mounted_camera_pose,
    observe,
)

GALLERY_SCHEMA_VERSION = 1

GLOBAL_DESCRIPTOR_DIM = 256
_PROJECTION_SEED = 702_301  # fixed: gallery and queries must share the projection


@dataclass
class Keyframe:
    id: int
    pose: Pose
    pixels: np.ndarray  # (M, 2)
    descriptors: np.ndarray  # (M, D)
    landmark_ids: np.ndarray  # (M,)
    global_descriptor: np.ndarray  # (G,)


@dataclass
class Point3D:
    position: np.ndarray
    observing_keyframes: frozenset


@dataclass
class GalleryMap:
    keyframes: list
    points3d: dict  # landmark_id -> Point3D
    covisibility: dict  # keyframe id -> set of keyframe ids
    intrinsics: CameraIntrinsics
    mount: CameraMount
    spacing: float
    global_matrix: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.global_matrix = np.array([kf.global_descriptor for kf in self.keyframes])
        # per-keyframe landmark ids restricted to triangulated points
        self._lifted_ids = {}
        for kf in self.keyframes:
            mask = np.array([int(lid) in self.points3d for lid in kf.landmark_ids], dtype=bool)
            self._lifted_ids[kf.id] = kf.landmark_ids[mask].astype(int)
        # one representative descriptor per 3D point (lowest observing
        # keyframe); matching raw detections would put exact duplicates of a
        # landmark into the pool and defeat the two-NN ratio test
        self._point_descriptor = {}
        for lid, point in self.points3d.items():
            kf = self.keyframes[min(point.observing_keyframes)]
            det = int(np.flatnonzero(kf.landmark_ids == lid)[0])
            self._point_descriptor[lid] = kf.descriptors[det]

    def lifted_ids(self, keyframe_id: int) -> np.ndarray:
        return self._lifted_ids[keyframe_id]

    def point_descriptor(self, landmark_id: int) -> np.ndarray:
        return self._point_descriptor[landmark_id]

    def __len__(self) -> int:
        return len(self.keyframes)


def _projection_matrix(local_dim: int) -> np.ndarray:
    rng = stream(_PROJECTION_SEED, "global-descriptor-projection", GLOBAL_DESCRIPTOR_DIM, local_dim)
    m = rng.normal(size=(GLOBAL_DESCRIPTOR_DIM, local_dim))
    return m / np.sqrt(local_dim)


_PROJECTION_CACHE: dict = {}


def global_descriptor(descriptors: np.ndarray) -> np.ndarray:
    """Aggregate local descriptors into a place descriptor.

    Each local descriptor is passed through a fixed random projection and
    the results are summed and normalized; pixel positions do not enter, so
    nearby viewpoints of the same landmarks agree closely.
    """
    descriptors = np.asarray(descriptors, dtype=float)
    if descriptors.size == 0:
        fallback = np.zeros(GLOBAL_DESCRIPTOR_DIM)
        fallback[0] = 1.0
        return fallback
    dim = descriptors.shape[1]
    if dim not in _PROJECTION_CACHE:
        _PROJECTION_CACHE[dim] = _projection_matrix(dim)
    agg = _PROJECTION_CACHE[dim] @ descriptors.sum(axis=0)
    norm = np.linalg.norm(agg)
    if norm < 1e-12:
        fallback = np.zeros(GLOBAL_DESCRIPTOR_DIM)
        fallback[0] = 1.0
        return fallback
    return agg / norm


def build_gallery(
    world: WorldMap,
    route: Route,
    spacing: float,
    mount: CameraMount,
    intrinsics: CameraIntrinsics,
) -> GalleryMap:
    """Capture keyframes every ``spacing`` meters under pristine conditions
    and triangulate every landmark seen by at least two of them.

    Keyframe poses are exact (mapping runs with ground truth); landmark
    positions come from multi-view triangulation, not from the world model.
    """
    if spacing <= 0:
        raise InvalidSpec("gallery spacing must be positive")
    pristine_cond = EnvironmentCondition(illumination_k=0)
    pristine_deg = DegradationModel(
        dropout_max=0.0, descriptor_sigma_max=0.0, pixel_sigma=0.0, view_angle_sigma_scale=0.0
    )
    rng = stream(world.seed, "gallery-capture")  # unused under pristine capture

    arcs = np.arange(0.0, route.total_length, spacing)
    keyframes: list[Keyframe] = []
    for kf_id, s in enumerate(arcs):
        pos, heading = route.point_at(float(s))
        state = VehicleState(x=pos[0], y=pos[1], yaw=heading, speed=0.0)
        cam = mounted_camera_pose(state, mount)
        obs = observe(world, cam, intrinsics, pristine_cond, pristine_deg, rng)
        keyframes.append(
            Keyframe(
                id=kf_id,
                pose=cam,
                pixels=obs.pixels,
                descriptors=obs.descriptors,
                landmark_ids=obs.debug_landmark_ids,
                global_descriptor=global_descriptor(obs.descriptors),
            )
        )
    if not keyframes:
        raise EmptyGallery("route produced no keyframes")

    observers: dict[int, list[tuple[int, np.ndarray]]] = {}
    for kf in keyframes:
        for pix, lid in zip(kf.pixels, kf.landmark_ids):
            observers.setdefault(int(lid), []).append((kf.id, pix))

    points3d: dict[int, Point3D] = {}
    for lid, obs_list in sorted(observers.items()):
        if len(obs_list) < 2:
            continue
        try:
            position = triangulate(
                [(keyframes[kf_id].pose, pix) for kf_id, pix in obs_list], intrinsics
            )
        except DegenerateGeometry:
            continue
        points3d[lid] = Point3D(
            position=position, observing_keyframes=frozenset(k for k, _ in obs_list)
        )

    covisibility: dict[int, set] = {kf.id: set() for kf in keyframes}
    for point in points3d.values():
        members = sorted(point.observing_keyframes)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                covisibility[a].add(b)
                covisibility[b].add(a)

    return GalleryMap(
        keyframes=keyframes,
        points3d=points3d,
        covisibility=covisibility,
        intrinsics=intrinsics,
        mount=mount,
        spacing=spacing,
    )


def retrieve(gallery: GalleryMap, query_descriptor: np.ndarray, top_k: int) -> list[int]:
    """Keyframe ids with the highest cosine similarity, ties by ascending id."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    sims = gallery.global_matrix @ np.asarray(query_descriptor, dtype=float)
    order = np.lexsort((np.arange(len(sims)), -sims))
    return [int(i) for i in order[: min(top_k, len(sims))]]


def covis_cluster(gallery: GalleryMap, keyframe_ids: list[int]) -> list[list[int]]:
    """Connected components of the covisibility subgraph induced by the ids,
    largest first, ties by smallest member."""
    ids = list(keyframe_ids)
    id_set = set(ids)
    for i in ids:
        if i not in gallery.covisibility:
            raise KeyError(f"keyframe {i} not in gallery")
    seen: set[int] = set()
    clusters: list[list[int]] = []
    for start in ids:
        if start in seen:
            continue
        component = []
        frontier = [start]
        seen.add(start)
        while frontier:
            node = frontier.pop()
            component.append(node)
            for nb in gallery.covisibility[node]:
                if nb in id_set and nb not in seen:
                    seen.add(nb)
                    frontier.append(nb)
        clusters.append(sorted(component))
    clusters.sort(key=lambda c: (-len(c), c[0]))
    return clusters


def match_nn_ratio(
    query_descriptors: np.ndarray, gallery_descriptors: np.ndarray, ratio: float
) -> list[tuple[int, int]]:
    """Nearest-neighbor matches passing the ratio test, then mutual-best
    filtering. A single-entry gallery yields no matches (no second neighbor).
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must be in (0, 1)")
    q = np.asarray(query_descriptors, dtype=float)
    g = np.asarray(gallery_descriptors, dtype=float)
    if len(q) == 0 or len(g) < 2:
        return []
    # squared distances via the expansion trick; guard tiny negatives
    d2 = np.maximum(
        (q**2).sum(axis=1)[:, None] + (g**2).sum(axis=1)[None, :] - 2.0 * (q @ g.T), 0.0
    )
    nn = np.argpartition(d2, 1, axis=1)[:, :2]
    row = np.arange(len(q))
    d_pair = np.sqrt(np.stack([d2[row, nn[:, 0]], d2[row, nn[:, 1]]], axis=1))
    first_is_nearer = d_pair[:, 0] <= d_pair[:, 1]
    best = np.where(first_is_nearer, nn[:, 0], nn[:, 1])
    d1 = np.where(first_is_nearer, d_pair[:, 0], d_pair[:, 1])
    d2nd = np.where(first_is_nearer, d_pair[:, 1], d_pair[:, 0])
    accepted = d1 < ratio * d2nd
    # mutual best: the query must also be the closest query to its gallery hit
    best_query_for_gallery = np.argmin(d2, axis=0)
    matches = [
        (int(qi), int(best[qi]))
        for qi in np.flatnonzero(accepted)
        if best_query_for_gallery[best[qi]] == qi
    ]
    return matches


@dataclass
class LocalizeParams:
    top_k: int = 5
    ratio: float = 0.8
    ransac: RansacParams = field(default_factory=RansacParams)


@dataclass
class PoseEstimate:
    pose: Pose
    num_inliers: int
    cluster_id: int
    query_timestamp: float
    latency: float = 0.0


def localize(
    gallery: GalleryMap,
    observation: QueryObservation,
    params: LocalizeParams,
    latency: float = 0.0,
) -> PoseEstimate | None:
    """Full hierarchical localization of one query observation.

    Retrieval -> co-visibility clusters -> per-cluster NN-ratio matching
    against triangulated landmarks -> per-cluster RANSAC PnP; the cluster
    with the most inliers wins (ties: larger cluster, then lower index).
    Returns None when every cluster fails.
    """
    if len(gallery) == 0:
        raise EmptyGallery("cannot localize against an empty gallery")
    if len(observation) == 0:
        return None
    query_global = global_descriptor(observation.descriptors)
    retrieved = retrieve(gallery, query_global, params.top_k)
    clusters = covis_cluster(gallery, retrieved)

    best: tuple[int, int, int] | None = None  # (-inliers, -cluster size, index)
    best_result = None
    for cluster_index, cluster in enumerate(clusters):
        lids = [gallery.lifted_ids(kf_id) for kf_id in cluster]
        lids = [l for l in lids if len(l)]
        if not lids:
            continue
        gal_lid = np.unique(np.concatenate(lids))
        gal_desc = np.array([gallery.point_descriptor(int(lid)) for lid in gal_lid])
        matches = match_nn_ratio(observation.descriptors, gal_desc, params.ratio)
        if len(matches) < 4:
            continue
        corrs = [
            Correspondence2D3D(
                pixel=observation.pixels[qi],
                point=gallery.points3d[int(gal_lid[gi])].position,
                landmark_id=int(gal_lid[gi]),
            )
            for qi, gi in matches
        ]
        try:
            result = ransac_pnp(corrs, gallery.intrinsics, params.ransac)
        except (InsufficientCorrespondences, NoConsensus):
            continue
        key = (-len(result.inlier_ids), -len(cluster), cluster_index)
        if best is None or key < best:
            best = key
            best_result = (result, cluster_index)

    if best_result is None:
        return None
    result, cluster_index = best_result
    return PoseEstimate(
        pose=result.pose,
        num_inliers=len(result.inlier_ids),
        cluster_id=cluster_index,
        query_timestamp=observation.timestamp,
        latency=latency,
    )


# ------------------------------------------------------------- persistence


def save_gallery(gallery: GalleryMap, path: str | Path) -> None:
    """Write the gallery as an npz archive with an integrity checksum."""
    kf_offsets = np.cumsum([0] + [len(kf.pixels) for kf in gallery.keyframes])
    arrays = {
        "kf_translations": np.array([kf.pose.translation for kf in gallery.keyframes]),
        "kf_rotations": np.array([kf.pose.rotation for kf in gallery.keyframes]),
        "kf_offsets": kf_offsets,
        "det_pixels": np.concatenate([kf.pixels for kf in gallery.keyframes]),
        "det_descriptors": np.concatenate([kf.descriptors for kf in gallery.keyframes]),
        "det_landmark_ids": np.concatenate([kf.landmark_ids for kf in gallery.keyframes]),
        "global_descriptors": gallery.global_matrix,
        "point_ids": np.array(sorted(gallery.points3d), dtype=int),
        "point_positions": np.array(
            [gallery.points3d[i].position for i in sorted(gallery.points3d)]
        ),
    }
    point_observers = [
        np.array(sorted(gallery.points3d[i].observing_keyframes), dtype=int)
        for i in sorted(gallery.points3d)
    ]
    arrays["point_observer_offsets"] = np.cumsum([0] + [len(o) for o in point_observers])
    arrays["point_observers"] = (
        np.concatenate(point_observers) if point_observers else np.empty(0, dtype=int)
    )
    checksum = _arrays_checksum(arrays)
    meta = {
        "schema_version": GALLERY_SCHEMA_VERSION,
        "checksum": checksum,
        "spacing": gallery.spacing,
        "mount": [gallery.mount.height, gallery.mount.offset_z, gallery.mount.pitch_theta],
        "intrinsics": [
            gallery.intrinsics.focal_x,
            gallery.intrinsics.focal_y,
            gallery.intrinsics.principal_x,
            gallery.intrinsics.principal_y,
            gallery.intrinsics.width,
            gallery.intrinsics.height,
        ],
    }
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez_compressed(path, **arrays)


def load_gallery(path: str | Path) -> GalleryMap:
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(bytes(arrays.pop("meta_json")).decode("utf-8"))
    if meta["schema_version"] != GALLERY_SCHEMA_VERSION:
        raise InvalidSpec(f"unsupported gallery schema {meta['schema_version']}")
    if _arrays_checksum(arrays) != meta["checksum"]:
        raise InvalidSpec("gallery checksum mismatch; file corrupted")
    fi = meta["intrinsics"]
    intrinsics = CameraIntrinsics(fi[0], fi[1], fi[2], fi[3], int(fi[4]), int(fi[5]))
    mount = CameraMount(*meta["mount"])
    offs = arrays["kf_offsets"]
    keyframes = []
    for i in range(len(arrays["kf_translations"])):
        lo, hi = int(offs[i]), int(offs[i + 1])
        keyframes.append(
            Keyframe(
                id=i,
                pose=Pose(arrays["kf_translations"][i], arrays["kf_rotations"][i]),
                pixels=arrays["det_pixels"][lo:hi],
                descriptors=arrays["det_descriptors"][lo:hi],
                landmark_ids=arrays["det_landmark_ids"][lo:hi],
                global_descriptor=arrays["global_descriptors"][i],
            )
        )
    points3d = {}
    pobs = arrays["point_observer_offsets"]
    for j, lid in enumerate(arrays["point_ids"]):
        lo, hi = int(pobs[j]), int(pobs[j + 1])
        points3d[int(lid)] = Point3D(
            position=arrays["point_positions"][j],
            observing_keyframes=frozenset(int(k) for k in arrays["point_observers"][lo:hi]),
        )
    covisibility: dict[int, set] = {kf.id: set() for kf in keyframes}
    for point in points3d.values():
        members = sorted(point.observing_keyframes)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                covisibility[a].add(b)
                covisibility[b].add(a)
    return GalleryMap(
        keyframes=keyframes,
        points3d=points3d,
        covisibility=covisibility,
        intrinsics=intrinsics,
        mount=mount,
        spacing=float(meta["spacing"]),
    )


def _arrays_checksum(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("ascii"))
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()
