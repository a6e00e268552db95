"""Procedural indoor scenes and the voxel occupancy grid used for occlusion."""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, GenerationError, OutOfBoundsError, SchemaError
from .geom import CameraModel, Pose, project_points

SCENE_SCHEMA = "activeloc.scene/1"
GRID_MAGIC = b"AVLOCC01"


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    kind: str = "low"  # "low" furniture or "wall" partition

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        return np.all((p >= np.asarray(self.lo)) & (p <= np.asarray(self.hi)), axis=-1)

    @property
    def size(self):
        return np.asarray(self.hi) - np.asarray(self.lo)


@dataclass
class SceneConfig:
    room_size: tuple = (8.0, 8.0, 3.0)
    n_landmarks: int = 200
    n_low: int = 10
    low_footprint: tuple = (0.3, 1.2)
    low_height: tuple = (0.6, 1.0)
    n_tall: int = 2
    tall_thickness: tuple = (0.15, 0.3)
    tall_length: tuple = (1.5, 3.0)
    tall_height: tuple = (1.8, 2.4)
    wall_margin: float = 0.6
    occluder_gap: float = 0.4
    # landmark placement: fractions on furniture tops and on occluder side faces,
    # the remainder goes on the room walls
    top_fraction: float = 0.35
    side_fraction: float = 0.35
    wall_z_range: tuple = (0.1, 2.0)
    surface_offset: float = 0.002

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(eq=False)
class Scene:
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    occluders: list
    landmark_positions: np.ndarray
    landmark_quality: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float)
        self.landmark_positions = np.asarray(self.landmark_positions, dtype=float).reshape(-1, 3)
        self.landmark_quality = np.asarray(self.landmark_quality, dtype=float).reshape(-1)
        if len(self.landmark_positions) != len(self.landmark_quality):
            raise ValueError("positions and quality must have equal length")
        inside = np.all((self.landmark_positions >= self.bounds_lo) & (self.landmark_positions <= self.bounds_hi), axis=1)
        if not inside.all():
            raise ValueError("all landmarks must lie inside the scene bounds")
        if np.any((self.landmark_quality < 0) | (self.landmark_quality > 1)):
            raise ValueError("landmark quality must be in [0, 1]")

    @property
    def n_landmarks(self):
        return len(self.landmark_positions)

    @property
    def landmark_ids(self):
        return np.arange(self.n_landmarks)

    def to_json(self):
        doc = {
            "schema": SCENE_SCHEMA,
            "seed": int(self.seed),
            "bounds": {"lo": self.bounds_lo.tolist(), "hi": self.bounds_hi.tolist()},
            "occluders": [{"lo": list(b.lo), "hi": list(b.hi), "kind": b.kind} for b in self.occluders],
            "landmarks": [
                {"id": i, "position": p.tolist(), "quality": float(q)}
                for i, (p, q) in enumerate(zip(self.landmark_positions, self.landmark_quality))
            ],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema") != SCENE_SCHEMA:
            raise SchemaError(f"expected scene schema {SCENE_SCHEMA}, got {doc.get('schema')}")
        lms = sorted(doc["landmarks"], key=lambda d: d["id"])
        if [d["id"] for d in lms] != list(range(len(lms))):
            raise SchemaError("landmark ids must be dense from 0")
        return cls(
            doc["bounds"]["lo"],
            doc["bounds"]["hi"],
            [Box(tuple(b["lo"]), tuple(b["hi"]), b["kind"]) for b in doc["occluders"]],
            np.array([d["position"] for d in lms], dtype=float).reshape(-1, 3),
            np.array([d["quality"] for d in lms], dtype=float),
            doc["seed"],
        )


def _place_box(rng, room, cfg, placed, footprint, height, kind):
    for _ in range(2000):
        if kind == "wall":
            length = rng.uniform(*cfg.tall_length)
            thick = rng.uniform(*cfg.tall_thickness)
            sx, sy = (length, thick) if rng.random() < 0.5 else (thick, length)
        else:
            sx, sy = rng.uniform(*footprint), rng.uniform(*footprint)
        sz = rng.uniform(*height)
        m = cfg.wall_margin
        if room[0] - 2 * m < sx or room[1] - 2 * m < sy:
            continue
        x0 = rng.uniform(m, room[0] - m - sx)
        y0 = rng.uniform(m, room[1] - m - sy)
        lo, hi = (x0, y0, 0.0), (x0 + sx, y0 + sy, min(sz, room[2]))
        g = cfg.occluder_gap
        if any(lo[0] < b.hi[0] + g and b.lo[0] < hi[0] + g and lo[1] < b.hi[1] + g and b.lo[1] < hi[1] + g
               for b in placed):
            continue
        return Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi), kind)
    raise GenerationError("could not place occluder without overlap; reduce occluder count or sizes")


def _point_on_walls(rng, room, cfg):
    # walls weighted by length; all have equal height
    lengths = np.array([room[0], room[1], room[0], room[1]])
    w = rng.choice(4, p=lengths / lengths.sum())
    z = rng.uniform(*cfg.wall_z_range)
    t = rng.random()
    off = cfg.surface_offset
    if w == 0:
        return np.array([t * room[0], off, z])
    if w == 1:
        return np.array([room[0] - off, t * room[1], z])
    if w == 2:
        return np.array([t * room[0], room[1] - off, z])
    return np.array([off, t * room[1], z])


def _point_on_box_side(rng, box, cfg):
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    sx, sy = hi[:2] - lo[:2]
    face = rng.choice(4, p=np.array([sx, sy, sx, sy]) / (2 * (sx + sy)))
    z = rng.uniform(lo[2] + 0.02, hi[2] - 0.02)
    t = rng.random()
    off = cfg.surface_offset
    if face == 0:
        return np.array([lo[0] + t * sx, lo[1] - off, z])
    if face == 1:
        return np.array([hi[0] + off, lo[1] + t * sy, z])
    if face == 2:
        return np.array([lo[0] + t * sx, hi[1] + off, z])
    return np.array([lo[0] - off, lo[1] + t * sy, z])


def gen_scene(config: SceneConfig, seed: int) -> Scene:
    """Generate a room with furniture, partitions and surface landmarks.

    Deterministic for a fixed ``(config, seed)``.
    """
    if config.n_landmarks <= 0:
        raise ConfigError("landmark count must be positive")
    room = np.asarray(config.room_size, dtype=float)
    if np.any(room <= 0):
        raise ConfigError("room dimensions must be positive")
    biggest = max(config.low_footprint[1] if config.n_low else 0.0,
                  config.tall_thickness[1] if config.n_tall else 0.0)
    if config.n_low + config.n_tall and min(room[:2]) - 2 * config.wall_margin < biggest:
        raise ConfigError("room is smaller than a single occluder")
    if not 0 <= config.top_fraction + config.side_fraction <= 1:
        raise ConfigError("landmark placement fractions must sum to at most 1")

    rng = np.random.default_rng(seed)
    occluders = []
    for _ in range(config.n_tall):
        occluders.append(_place_box(rng, room, config, occluders, None, config.tall_height, "wall"))
    for _ in range(config.n_low):
        occluders.append(_place_box(rng, room, config, occluders, config.low_footprint, config.low_height, "low"))

    low = [b for b in occluders if b.kind == "low"]
    n = config.n_landmarks
    n_top = int(round(config.top_fraction * n)) if low else 0
    n_side = int(round(config.side_fraction * n)) if occluders else 0
    n_side = min(n_side, n - n_top)
    pts = []
    if n_top:
        areas = np.array([b.size[0] * b.size[1] for b in low])
        for k in rng.choice(len(low), size=n_top, p=areas / areas.sum()):
            b = low[k]
            x, y = rng.uniform(b.lo[0], b.hi[0]), rng.uniform(b.lo[1], b.hi[1])
            pts.append(np.array([x, y, b.hi[2] + config.surface_offset]))
    if n_side:
        per = np.array([2 * (b.size[0] + b.size[1]) * b.size[2] for b in occluders])
        for k in rng.choice(len(occluders), size=n_side, p=per / per.sum()):
            pts.append(_point_on_box_side(rng, occluders[k], config))
    for _ in range(n - n_top - n_side):
        pts.append(_point_on_walls(rng, room, config))
    pts = np.array(pts)
    pts = np.clip(pts, 0.0, room)
    quality = rng.random(n)
    return Scene(np.zeros(3), room, occluders, pts, quality, seed)


@dataclass(eq=False)
class OccupancyGrid:
    origin: np.ndarray
    voxel_size: float
    dims: tuple
    occupancy: np.ndarray
    degraded: bool = False

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.dims = tuple(int(d) for d in self.dims)
        self.occupancy = np.asarray(self.occupancy, dtype=bool).reshape(self.dims)

    @property
    def upper(self):
        return self.origin + self.voxel_size * np.asarray(self.dims)

    def centers(self, axis):
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.voxel_size

    def contains(self, points):
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.origin) & (p <= self.upper), axis=-1)

    def voxel_of(self, points):
        p = np.asarray(points, dtype=float)
        idx = np.floor((p - self.origin) / self.voxel_size).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.dims) - 1)

    def is_occupied(self, points):
        i = self.voxel_of(points)
        return self.occupancy[i[..., 0], i[..., 1], i[..., 2]]

    def is_free(self, point, clearance=0.0):
        """True when every voxel within ``clearance`` (box metric) of ``point`` is free."""
        p = np.asarray(point, dtype=float)
        if not self.contains(p):
            return False
        lo = self.voxel_of(p - clearance)
        hi = self.voxel_of(p + clearance)
        return not self.occupancy[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].any()

    def clip_inside(self, points, eps=1e-9):
        return np.clip(points, self.origin + eps, self.upper - eps)

    def to_bytes(self):
        header = GRID_MAGIC + struct.pack("<3dd3I", *self.origin, self.voxel_size, *self.dims)
        body = np.packbits(self.occupancy.ravel(order="C"), bitorder="little").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, blob):
        if blob[:8] != GRID_MAGIC:
            raise SchemaError("not an occupancy grid blob")
        vals = struct.unpack_from("<3dd3I", blob, 8)
        origin, vs, dims = vals[:3], vals[3], vals[4:]
        n = int(np.prod(dims))
        off = 8 + struct.calcsize("<3dd3I")
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=off), bitorder="little", count=n)
        return cls(np.array(origin), vs, dims, bits.astype(bool).reshape(dims))


def build_occupancy(scene: Scene, voxel_size: float = 0.05) -> OccupancyGrid:
    """Voxelize the scene: a voxel is occupied iff its center lies inside an occluder.

    The grid spans exactly the room; walls coincide with the grid boundary.
    """
    if voxel_size <= 0:
        raise ConfigError("voxel_size must be positive")
    extent = scene.bounds_hi - scene.bounds_lo
    dims = tuple(int(math.ceil(e / voxel_size - 1e-9)) for e in extent)
    grid = OccupancyGrid(scene.bounds_lo, voxel_size, dims, np.zeros(dims, dtype=bool))
    axes = [grid.centers(a) for a in range(3)]
    for b in scene.occluders:
        m = [(axes[a] >= b.lo[a]) & (axes[a] <= b.hi[a]) for a in range(3)]
        grid.occupancy |= m[0][:, None, None] & m[1][None, :, None] & m[2][None, None, :]
    smallest = min((float(np.min(b.size)) for b in scene.occluders), default=math.inf)
    if voxel_size > smallest:
        grid.degraded = True
        warnings.warn(f"voxel size {voxel_size} exceeds the smallest occluder dimension {smallest:.3f}",
                      stacklevel=2)
    return grid


def rays_occluded(grid: OccupancyGrid, start, ends):
    """Exact voxel traversal from one start point to many end points.

    A segment is occluded when it passes through an occupied voxel other than
    the voxels containing its two endpoints. Every voxel the open segment
    enters is found from the sorted parameters of its grid-plane crossings.
    """
    start = np.asarray(start, dtype=float)
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    if not grid.contains(start) or not np.all(grid.contains(ends)):
        raise OutOfBoundsError("segment endpoint outside the occupancy grid")
    m = len(ends)
    if m == 0:
        return np.zeros(0, dtype=bool)
    vs = grid.voxel_size
    d = ends - start
    a_rel = (start - grid.origin) / vs
    b_rel = (ends - grid.origin) / vs
    ts = [np.zeros((m, 1)), np.ones((m, 1))]
    for k in range(3):
        lo = np.minimum(a_rel[k], b_rel[:, k])
        hi = np.maximum(a_rel[k], b_rel[:, k])
        first = np.floor(lo) + 1
        count = np.maximum(np.ceil(hi) - first, 0).astype(np.int64)
        cmax = int(count.max()) if m else 0
        if cmax == 0:
            continue
        planes = first[:, None] + np.arange(cmax)[None, :]
        valid = np.arange(cmax)[None, :] < count[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (planes - a_rel[k]) / (b_rel[:, k] - a_rel[k])[:, None]
        ts.append(np.where(valid, t, np.inf))
    t = np.sort(np.concatenate(ts, axis=1), axis=1)
    t0, t1 = t[:, :-1], t[:, 1:]
    seg = np.isfinite(t1) & (t1 > t0)
    mid = np.where(seg, 0.5 * (t0 + t1), 0.0)
    pts = start[None, None, :] + mid[..., None] * d[:, None, :]
    vox = grid.voxel_of(pts)
    va = grid.voxel_of(start)
    vb = grid.voxel_of(ends)
    is_end = np.all(vox == va, axis=-1) | np.all(vox == vb[:, None, :], axis=-1)
    occ = grid.occupancy[vox[..., 0], vox[..., 1], vox[..., 2]]
    return np.any(occ & seg & ~is_end, axis=1)


def ray_occluded(grid: OccupancyGrid, a, b) -> bool:
    return bool(rays_occluded(grid, a, np.asarray(b, dtype=float).reshape(1, 3))[0])


def visible_mask(grid, camera_pose: Pose, cam: CameraModel, points, occlusion=True, occluded=None):
    """Visibility of many points: in the frustum and, optionally, unoccluded.

    ``occluded`` may carry a precomputed per-point occlusion mask for the
    camera position (it does not depend on orientation).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _, in_frustum = project_points(points, camera_pose, cam)
    if not occlusion or grid is None:
        return in_frustum
    vis = in_frustum.copy()
    if occluded is not None:
        return vis & ~np.asarray(occluded, dtype=bool)
    if vis.any():
        idx = np.flatnonzero(vis)
        vis[idx] = ~rays_occluded(grid, camera_pose.position, grid.clip_inside(points[idx]))
    return vis


def visible(grid, camera_pose: Pose, cam: CameraModel, landmark_position) -> bool:
    return bool(visible_mask(grid, camera_pose, cam, np.reshape(landmark_position, (1, 3)))[0])
