"""Head-height mapping pass: which landmarks get mapped and how they were seen."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMapError, GenerationError, SchemaError
from .geom import CameraModel, Pose, angle_between_deg, project_points, yaw_pitch_matrix
from .scene import OccupancyGrid, Scene, build_occupancy, rays_occluded

MAP_SCHEMA = "activeloc.map/1"


@dataclass(frozen=True)
class LandmarkObsStats:
    dist_min: float
    dist_max: float
    ang_min: float
    ang_max: float
    mean_view_dir: np.ndarray
    cone_half_angle: float
    obs_count: int


@dataclass(frozen=True)
class MappedLandmark:
    id: int
    position: np.ndarray
    descriptor: np.ndarray
    stats: LandmarkObsStats


class LandmarkMap:
    """Mapped landmarks stored column-wise.

    ``mean_view_dir`` points from the landmark towards the mapping cameras.
    """

    _columns = ("dist_min", "dist_max", "ang_min", "ang_max", "cone_half_angle", "obs_count")

    def __init__(self, ids, positions, descriptors, dist_min, dist_max, ang_min, ang_max,
                 mean_view_dir, cone_half_angle, obs_count, mapping_poses=(), cam=None,
                 source_scene_seed=0):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.descriptors = np.asarray(descriptors, dtype=float).reshape(len(self.ids), -1)
        self.dist_min = np.asarray(dist_min, dtype=float)
        self.dist_max = np.asarray(dist_max, dtype=float)
        self.ang_min = np.asarray(ang_min, dtype=float)
        self.ang_max = np.asarray(ang_max, dtype=float)
        self.mean_view_dir = np.asarray(mean_view_dir, dtype=float).reshape(-1, 3)
        self.cone_half_angle = np.asarray(cone_half_angle, dtype=float)
        self.obs_count = np.asarray(obs_count, dtype=np.int64)
        self.mapping_poses = list(mapping_poses)
        self.cam = cam if cam is not None else CameraModel()
        self.source_scene_seed = int(source_scene_seed)
        if np.any(self.dist_min > self.dist_max) or np.any(self.ang_min > self.ang_max):
            raise ValueError("min statistics must not exceed max statistics")
        if np.any(self.obs_count < 1):
            raise ValueError("every mapped landmark needs at least one observation")
        if len(self.ids) and not np.allclose(np.linalg.norm(self.descriptors, axis=1), 1.0, atol=1e-6):
            raise ValueError("descriptors must be unit norm")

    def __len__(self):
        return len(self.ids)

    @property
    def d_app(self):
        return self.descriptors.shape[1]

    def __getitem__(self, i):
        stats = LandmarkObsStats(float(self.dist_min[i]), float(self.dist_max[i]), float(self.ang_min[i]),
                                 float(self.ang_max[i]), self.mean_view_dir[i].copy(),
                                 float(self.cone_half_angle[i]), int(self.obs_count[i]))
        return MappedLandmark(int(self.ids[i]), self.positions[i].copy(), self.descriptors[i].copy(), stats)

    @property
    def landmarks(self):
        return [self[i] for i in range(len(self))]

    def to_json(self):
        doc = {
            "schema": MAP_SCHEMA,
            "source_scene_seed": self.source_scene_seed,
            "cam": self.cam.to_dict(),
            "mapping_poses": [{"position": p.position.tolist(), "orientation": p.orientation.tolist()}
                              for p in self.mapping_poses],
            "landmarks": [
                {
                    "id": int(self.ids[i]),
                    "position": self.positions[i].tolist(),
                    "descriptor": self.descriptors[i].tolist(),
                    "mean_view_dir": self.mean_view_dir[i].tolist(),
                    **{c: getattr(self, c)[i].item() for c in self._columns},
                }
                for i in range(len(self))
            ],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema") != MAP_SCHEMA:
            raise SchemaError(f"expected map schema {MAP_SCHEMA}, got {doc.get('schema')}")
        lms = doc["landmarks"]
        col = {c: [d[c] for d in lms] for c in cls._columns}
        return cls(
            [d["id"] for d in lms],
            np.array([d["position"] for d in lms], dtype=float).reshape(-1, 3),
            np.array([d["descriptor"] for d in lms], dtype=float),
            mean_view_dir=np.array([d["mean_view_dir"] for d in lms], dtype=float).reshape(-1, 3),
            mapping_poses=[Pose(p["position"], p["orientation"]) for p in doc["mapping_poses"]],
            cam=CameraModel(**doc["cam"]),
            source_scene_seed=doc["source_scene_seed"],
            **col,
        )


def make_mapping_trajectory(scene: Scene, height_m=1.6, waypoint_count=60, seed=0, grid=None,
                            clearance=0.3, yaw_jitter_deg=10.0, pitch_deg=-10.0, pitch_jitter_deg=8.0,
                            max_tries=500):
    """Random collision-free walk at a fixed height.

    Each pose looks towards the next waypoint (the last one keeps the previous
    heading), perturbed by uniform yaw/pitch jitter.
    """
    if waypoint_count < 2:
        raise ValueError("need at least two waypoints")
    if not scene.bounds_lo[2] < height_m < scene.bounds_hi[2]:
        raise ValueError("mapping height must lie inside the room")
    grid = grid if grid is not None else build_occupancy(scene)
    rng = np.random.default_rng(seed)
    lo = scene.bounds_lo[:2] + clearance
    hi = scene.bounds_hi[:2] - clearance

    def free_point():
        for _ in range(max_tries):
            p = np.array([*rng.uniform(lo, hi), height_m])
            if grid.is_free(p, clearance):
                return p
        raise GenerationError("no free mapping position found")

    pts = [free_point()]
    while len(pts) < waypoint_count:
        for _ in range(max_tries):
            p = free_point()
            if np.linalg.norm(p - pts[-1]) > 0.5 and not _segment_blocked(grid, pts[-1], p, clearance):
                pts.append(p)
                break
        else:
            raise GenerationError("no collision-free mapping path found within the retry budget")

    poses = []
    heading = None
    for i, p in enumerate(pts):
        if i + 1 < len(pts):
            d = pts[i + 1] - p
            heading = np.degrees(np.arctan2(d[1], d[0]))
        yaw = heading + rng.uniform(-yaw_jitter_deg, yaw_jitter_deg)
        pitch = pitch_deg + rng.uniform(-pitch_jitter_deg, pitch_jitter_deg)
        poses.append(Pose.from_matrix(yaw_pitch_matrix(yaw, pitch), p))
    return poses


def _segment_blocked(grid, a, b, clearance):
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / (0.5 * grid.voxel_size))))
    for t in np.linspace(0.0, 1.0, n):
        if not grid.is_free(a + t * (b - a), clearance):
            return True
    return False


def descriptor_raw(quality, landmark_id, seed, d_app=8, quality_noise=0.1, noise_scale=0.3):
    """Appearance vector before normalization.

    The first coordinate encodes quality on ``[-1, 1]``; the rest is noise
    seeded by ``(seed, landmark_id)``.
    """
    if d_app < 2:
        raise ValueError("descriptor dimension must be at least 2")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(landmark_id)])
    v = np.empty(d_app)
    v[0] = 2.0 * float(quality) - 1.0 + quality_noise * rng.standard_normal()
    v[1:] = noise_scale * rng.standard_normal(d_app - 1)
    return v


def synthetic_descriptor(quality, landmark_id, seed, d_app=8, quality_noise=0.1, noise_scale=0.3):
    v = descriptor_raw(quality, landmark_id, seed, d_app, quality_noise, noise_scale)
    n = np.linalg.norm(v)
    if n == 0:
        v[1] = 1.0
        n = 1.0
    return v / n


def observation_stats(positions, poses, cam, vis):
    """Fold the visible observations into per-landmark statistics.

    ``vis`` is a ``(n_poses, n_landmarks)`` visibility matrix.
    """
    n = positions.shape[0]
    count = vis.sum(axis=0)
    dmin = np.full(n, np.inf)
    dmax = np.full(n, -np.inf)
    amin = np.full(n, np.inf)
    amax = np.full(n, -np.inf)
    dir_sum = np.zeros((n, 3))
    for k, pose in enumerate(poses):
        m = vis[k]
        if not m.any():
            continue
        rel = pose.position - positions[m]
        dist = np.linalg.norm(rel, axis=1)
        ang = angle_between_deg(pose.forward[None, :], -rel)
        dmin[m] = np.minimum(dmin[m], dist)
        dmax[m] = np.maximum(dmax[m], dist)
        amin[m] = np.minimum(amin[m], ang)
        amax[m] = np.maximum(amax[m], ang)
        dir_sum[m] += rel / dist[:, None]
    norm = np.linalg.norm(dir_sum, axis=1)
    mean_dir = np.where(norm[:, None] > 0, dir_sum / np.where(norm > 0, norm, 1.0)[:, None], 0.0)
    cone = np.zeros(n)
    for k, pose in enumerate(poses):
        m = vis[k]
        if not m.any():
            continue
        rel = pose.position - positions[m]
        cone[m] = np.maximum(cone[m], angle_between_deg(rel, mean_dir[m]))
    return dict(dist_min=dmin, dist_max=dmax, ang_min=amin, ang_max=amax, mean_view_dir=mean_dir,
                cone_half_angle=cone, obs_count=count)


def mapping_visibility(scene: Scene, grid: OccupancyGrid, poses, cam: CameraModel):
    pts = scene.landmark_positions
    vis = np.zeros((len(poses), len(pts)), dtype=bool)
    for k, pose in enumerate(poses):
        _, inside = project_points(pts, pose, cam)
        idx = np.flatnonzero(inside)
        if len(idx):
            vis[k, idx] = ~rays_occluded(grid, pose.position, grid.clip_inside(pts[idx]))
    return vis


def simulate_mapping(scene: Scene, trajectory, cam: CameraModel, map_noise_sigma_m=0.01, min_obs=2,
                     rng=None, grid=None, d_app=8, map_noise_bound=None):
    """Build the landmark map from the mapping trajectory.

    Landmarks seen from at least ``min_obs`` poses are kept with a Gaussian
    position error (clipped to ``map_noise_bound``, default ``5 * sigma``).
    """
    if len(trajectory) == 0:
        raise ValueError("trajectory must not be empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    grid = grid if grid is not None else build_occupancy(scene)
    vis = mapping_visibility(scene, grid, trajectory, cam)
    stats = observation_stats(scene.landmark_positions, trajectory, cam, vis)
    keep = np.flatnonzero(stats["obs_count"] >= max(1, min_obs))
    if len(keep) == 0:
        raise EmptyMapError("no landmark was observed often enough; scene and trajectory do not match")
    bound = 5.0 * map_noise_sigma_m if map_noise_bound is None else map_noise_bound
    noise = map_noise_sigma_m * rng.standard_normal((len(keep), 3))
    nn = np.linalg.norm(noise, axis=1)
    over = nn > bound
    if np.any(over):
        noise[over] *= (bound / nn[over])[:, None]
    desc_seed = int(rng.integers(2**32))
    desc = np.array([synthetic_descriptor(scene.landmark_quality[i], i, desc_seed, d_app) for i in keep])
    return LandmarkMap(
        keep,
        scene.landmark_positions[keep] + noise,
        desc,
        mapping_poses=trajectory,
        cam=cam,
        source_scene_seed=scene.seed,
        **{k: v[keep] for k, v in stats.items()},
    )
