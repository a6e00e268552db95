"""Scene bundles, paired candidate sweeps and the on-disk record shards."""
from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BalancingError, GenerationError, SchemaError
from ..features import TOKEN_FIELDS, AggregationRanges, LandmarkFeatures, aggregate, encode_token_matrix, per_landmark_features
from ..geom import Pose, ViewpointCandidate, sample_viewpoints
from ..mapping import LandmarkMap, make_mapping_trajectory, simulate_mapping
from ..oracle import LocalizationResult, World, localize
from ..scene import Scene, gen_scene, rays_occluded
from .config import ExperimentConfig, WaypointConfig
from .seeds import SPLITS, Stream, derive_rng, derive_seed

logger = logging.getLogger(__name__)

SHARD_MAGIC = b"AVLSHD01"
SHARD_VERSION = "1"

# per-record arrays (first axis = record) and per-landmark arrays (first axis = token)
RECORD_FIELDS = {
    "split": "<i4", "scene": "<i4", "waypoint": "<i4", "candidate": "<i4",
    "position": "<f8", "orientation": "<f8", "yaw_pitch": "<f8", "next_waypoint": "<f8",
    "pos_error_m": "<f8", "rot_error_deg": "<f8", "success": "|u1", "inlier_count": "<i4", "label": "|u1",
    "agg_unfiltered": "<f8", "agg_filtered": "<f8", "lm_offsets": "<i8",
}
LANDMARK_FIELDS = {"lm_ids": "<i8", "lm_xc": "<f8", "lm_tokens": "<f8", "lm_occluded": "|u1"}


@dataclass(eq=False)
class SceneBundle:
    """A generated scene with its occupancy grid and its landmark map."""

    split: str
    index: int
    seed: int
    scene: Scene
    world: World
    lmap: LandmarkMap


def build_bundle(cfg: ExperimentConfig, master, split, index) -> SceneBundle:
    scene = gen_scene(cfg.scene, derive_seed(master, split, index, stream=Stream.SCENE))
    world = World.from_scene(scene, cfg.voxel_size)
    m = cfg.mapping
    traj = make_mapping_trajectory(scene, m.height_m, m.waypoint_count,
                                   derive_seed(master, split, index, candidate=0, stream=Stream.MAPPING),
                                   grid=world.grid, pitch_deg=m.pitch_deg)
    lmap = simulate_mapping(scene, traj, cfg.camera, m.noise_sigma_m, m.min_obs,
                            derive_rng(master, split, index, candidate=1, stream=Stream.MAPPING),
                            grid=world.grid, d_app=m.d_app)
    return SceneBundle(split, index, scene.seed, scene, world, lmap)


def sample_waypoints(world: World, n, rng, cfg: WaypointConfig = WaypointConfig()):
    """``n`` free-space positions at robot height, at least ``clearance_m`` from any occupied voxel."""
    lo = world.scene.bounds_lo[:2] + cfg.clearance_m
    hi = world.scene.bounds_hi[:2] - cfg.clearance_m
    out = []
    tries = 0
    while len(out) < n:
        if tries >= cfg.max_tries * max(n, 1):
            raise GenerationError("no free waypoint found at robot height; the scene is too cluttered")
        tries += 1
        p = np.array([*rng.uniform(lo, hi), cfg.height_m])
        if world.grid.is_free(p, cfg.clearance_m):
            out.append(p)
    return np.array(out).reshape(n, 3)


@dataclass(eq=False)
class WaypointSweep:
    """Every candidate at one waypoint with its landmark features and its localization result."""

    scene: int
    waypoint: int
    position: np.ndarray
    next_waypoint: np.ndarray
    candidates: list
    features: list  # unfiltered LandmarkFeatures carrying the occlusion flags
    results: list


def sweep_waypoint(bundle: SceneBundle, cfg: ExperimentConfig, master, waypoint, position, next_waypoint,
                   n_views) -> WaypointSweep:
    """Candidates, features and oracle draws at one waypoint.

    Every candidate's oracle stream is keyed by (scene, waypoint, candidate),
    so all policies evaluated on this sweep see identical draws.
    """
    split, s = bundle.split, bundle.index
    wc = cfg.waypoints
    cands = sample_viewpoints(position, n_views, wc.pitch_min_deg, wc.pitch_max_deg,
                              derive_seed(master, split, s, waypoint, stream=Stream.CANDIDATES))
    grid, lmap = bundle.world.grid, bundle.lmap
    # occlusion as the robot believes it (map points) and as it is (true points)
    occ_map = rays_occluded(grid, position, grid.clip_inside(lmap.positions))
    occ_true = bundle.world.occluded_from(position, bundle.scene.landmark_positions[lmap.ids])
    feats = [per_landmark_features(lmap, c, cfg.camera, False, occluded=occ_map,
                                   cone_slack_deg=cfg.features.cone_slack_deg) for c in cands]
    oc = cfg.oracle
    results = [localize(bundle.world, lmap, c.pose, cfg.camera, oc.noise, oc.ransac,
                        derive_rng(master, split, s, waypoint, i, Stream.ORACLE), occluded=occ_true)
               for i, c in enumerate(cands)]
    return WaypointSweep(s, waypoint, np.asarray(position, dtype=float), np.asarray(next_waypoint, dtype=float),
                         cands, feats, results)


def scene_waypoints(bundle: SceneBundle, cfg: ExperimentConfig, master, n):
    rng = derive_rng(master, bundle.split, bundle.index, stream=Stream.WAYPOINTS)
    return sample_waypoints(bundle.world, n, rng, cfg.waypoints)


def iter_sweeps(bundle: SceneBundle, cfg: ExperimentConfig, master, n_waypoints, n_views):
    """Sweeps along the scene's waypoint sequence; the next waypoint wraps to the first."""
    pts = scene_waypoints(bundle, cfg, master, n_waypoints)
    for w, p in enumerate(pts):
        yield sweep_waypoint(bundle, cfg, master, w, p, pts[(w + 1) % len(pts)], n_views)


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    scene_id: int
    waypoint_id: int
    candidate: int
    pose: Pose
    features: LandmarkFeatures
    aggregated: np.ndarray
    pos_error_m: float
    rot_error_deg: float
    label: int


def label_from_errors(pos_error_m, rot_error_deg, threshold):
    """1 where both errors are within the threshold; failed localizations carry infinite errors."""
    pe = np.asarray(pos_error_m, dtype=float)
    re = np.asarray(rot_error_deg, dtype=float)
    return ((pe <= threshold[0]) & (re <= threshold[1])).astype(np.uint8)


class RecordTable:
    """Column store of dataset records plus their per-landmark payloads.

    Record ``i`` owns landmark rows ``lm_offsets[i]:lm_offsets[i + 1]``.
    """

    def __init__(self, arrays, meta=None):
        self.arrays = arrays
        self.meta = dict(meta or {})
        n = len(arrays["label"])
        if len(arrays["lm_offsets"]) != n + 1:
            raise SchemaError("landmark offsets do not match the record count")

    def __len__(self):
        return len(self.arrays["label"])

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays", {})
        if name in arrays:
            return arrays[name]
        raise AttributeError(name)

    @classmethod
    def from_sweeps(cls, sweeps, split, threshold, ranges=AggregationRanges(), bins=16, heatmap=(8, 8), d_tok=None,
                    meta=None):
        cols = {k: [] for k in RECORD_FIELDS if k != "lm_offsets"}
        lm = {k: [] for k in LANDMARK_FIELDS}
        counts = []
        for sw in sweeps:
            for c, f, r in zip(sw.candidates, sw.features, sw.results):
                cols["split"].append(SPLITS[split])
                cols["scene"].append(sw.scene)
                cols["waypoint"].append(sw.waypoint)
                cols["candidate"].append(c.index)
                cols["position"].append(c.pose.position)
                cols["orientation"].append(c.pose.orientation)
                cols["yaw_pitch"].append((c.yaw, c.pitch))
                cols["next_waypoint"].append(sw.next_waypoint)
                pe, re = (r.pos_error_m, r.rot_error_deg) if r.success else (np.inf, np.inf)
                cols["pos_error_m"].append(pe)
                cols["rot_error_deg"].append(re)
                cols["success"].append(r.success)
                cols["inlier_count"].append(r.inlier_count)
                cols["agg_unfiltered"].append(aggregate(f, bins, heatmap, ranges).vector())
                cols["agg_filtered"].append(aggregate(f.unoccluded(), bins, heatmap, ranges).vector())
                tok = f.tokens()
                d_tok = tok.shape[1] if d_tok is None else d_tok
                lm["lm_ids"].append(f.ids)
                lm["lm_xc"].append(f.xc)
                lm["lm_tokens"].append(tok.reshape(len(f), d_tok))
                lm["lm_occluded"].append(f.occluded)
                counts.append(len(f))
        d_tok = d_tok or len(TOKEN_FIELDS)
        d_agg = 6 * bins + heatmap[0] * heatmap[1] + 1
        shapes = {"position": (3,), "orientation": (4,), "yaw_pitch": (2,), "next_waypoint": (3,),
                  "agg_unfiltered": (d_agg,), "agg_filtered": (d_agg,)}
        arrays = {}
        for k, v in cols.items():
            arrays[k] = np.asarray(v, dtype=RECORD_FIELDS[k]).reshape((len(v),) + shapes.get(k, ()))
        arrays["label"] = label_from_errors(arrays["pos_error_m"], arrays["rot_error_deg"], threshold)
        arrays["lm_offsets"] = np.concatenate([[0], np.cumsum(counts, dtype=np.int64)]).astype("<i8")
        lm_shapes = {"lm_ids": (), "lm_xc": (3,), "lm_tokens": (d_tok,), "lm_occluded": ()}
        for k, v in lm.items():
            a = np.concatenate(v) if v else np.zeros(0)
            arrays[k] = np.asarray(a, dtype=LANDMARK_FIELDS[k]).reshape((-1,) + lm_shapes[k])
        meta = dict(meta or {})
        meta.update({"threshold": list(threshold), "token_fields": list(TOKEN_FIELDS), "token_width": d_tok,
                     "aggregate_bins": bins, "heatmap": list(heatmap)})
        return cls(arrays, meta)

    # -- access -----------------------------------------------------------
    def landmark_slice(self, i):
        o = self.arrays["lm_offsets"]
        return slice(int(o[i]), int(o[i + 1]))

    def pose(self, i) -> Pose:
        return Pose(self.arrays["position"][i], self.arrays["orientation"][i])

    def candidate(self, i) -> ViewpointCandidate:
        yaw, pitch = self.arrays["yaw_pitch"][i]
        return ViewpointCandidate(self.pose(i), float(yaw), float(pitch), int(self.arrays["candidate"][i]))

    def features(self, i) -> LandmarkFeatures:
        """Rebuild the unfiltered landmark features of record ``i``."""
        sl = self.landmark_slice(i)
        tok = self.arrays["lm_tokens"][sl]
        xc = self.arrays["lm_xc"][sl]
        pose = self.pose(i)
        cols = {f: tok[:, k].copy() for k, f in enumerate(TOKEN_FIELDS)}
        return LandmarkFeatures(ids=self.arrays["lm_ids"][sl].copy(), points=xc @ pose.rotation.T + pose.position,
                                xc=xc.copy(), descriptor=tok[:, len(TOKEN_FIELDS):].copy(),
                                occluded=self.arrays["lm_occluded"][sl].astype(bool), **cols)

    def record(self, i) -> DatasetRecord:
        return DatasetRecord(int(self.arrays["scene"][i]), int(self.arrays["waypoint"][i]),
                             int(self.arrays["candidate"][i]), self.pose(i), self.features(i),
                             self.arrays["agg_filtered"][i], float(self.arrays["pos_error_m"][i]),
                             float(self.arrays["rot_error_deg"][i]), int(self.arrays["label"][i]))

    def token_sets(self, occlusion_filter=True, n_max=256, include_descriptor=True, include_context=False):
        """Encoded token matrices, exactly as a learned policy would build them at selection time."""
        out = []
        for i in range(len(self)):
            sl = self.landmark_slice(i)
            tok = self.arrays["lm_tokens"][sl]
            if occlusion_filter:
                tok = tok[~self.arrays["lm_occluded"][sl].astype(bool)]
            out.append(encode_token_matrix(tok, n_max, include_descriptor, include_context))
        return out

    def aggregates(self, occlusion_filter=True):
        return self.arrays["agg_filtered" if occlusion_filter else "agg_unfiltered"]

    def waypoint_groups(self):
        """Record index arrays per (split, scene, waypoint), in first-appearance order."""
        key = np.stack([self.arrays["split"], self.arrays["scene"], self.arrays["waypoint"]], axis=1)
        _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inv = inv.reshape(-1)
        order = np.argsort(first, kind="stable")
        return [np.flatnonzero(inv == g) for g in order]

    # -- reshaping ----------------------------------------------------------
    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        o = self.arrays["lm_offsets"]
        lm_idx = np.concatenate([np.arange(o[i], o[i + 1]) for i in idx]) if len(idx) else np.zeros(0, np.int64)
        counts = (o[idx + 1] - o[idx]) if len(idx) else np.zeros(0, np.int64)
        arrays = {}
        for k in RECORD_FIELDS:
            if k != "lm_offsets":
                arrays[k] = self.arrays[k][idx]
        arrays["label"] = self.arrays["label"][idx]
        arrays["lm_offsets"] = np.concatenate([[0], np.cumsum(counts)]).astype("<i8")
        for k in LANDMARK_FIELDS:
            arrays[k] = self.arrays[k][lm_idx]
        return RecordTable(arrays, self.meta)

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        if not tables:
            raise ValueError("nothing to concatenate")
        arrays = {}
        for k in RECORD_FIELDS:
            if k == "lm_offsets":
                continue
            arrays[k] = np.concatenate([t.arrays[k] for t in tables])
        arrays["label"] = np.concatenate([t.arrays["label"] for t in tables])
        counts = np.concatenate([np.diff(t.arrays["lm_offsets"]) for t in tables])
        arrays["lm_offsets"] = np.concatenate([[0], np.cumsum(counts)]).astype("<i8")
        for k in LANDMARK_FIELDS:
            arrays[k] = np.concatenate([t.arrays[k] for t in tables])
        meta = {k: v for k, v in tables[0].meta.items() if k not in ("scene", "scene_seed", "n_records")}
        return cls(arrays, meta)

    # -- binary io ----------------------------------------------------------
    def to_bytes(self):
        names = list(RECORD_FIELDS) + ["label"] + list(LANDMARK_FIELDS)
        names = list(dict.fromkeys(names))
        directory, offset, body = [], 0, []
        for n in names:
            dt = RECORD_FIELDS.get(n, LANDMARK_FIELDS.get(n, "|u1"))
            a = np.ascontiguousarray(self.arrays[n], dtype=dt)
            directory.append({"name": n, "dtype": dt, "shape": list(a.shape), "offset": offset})
            body.append(a.tobytes())
            offset += a.nbytes
        head = json.dumps({"version": SHARD_VERSION, "arrays": directory}, sort_keys=True).encode()
        return SHARD_MAGIC + struct.pack("<I", len(head)) + head + b"".join(body)

    @classmethod
    def from_bytes(cls, blob, meta=None):
        if blob[:8] != SHARD_MAGIC:
            raise SchemaError("not a record shard")
        (n,) = struct.unpack_from("<I", blob, 8)
        head = json.loads(blob[12:12 + n])
        if head.get("version") != SHARD_VERSION:
            raise SchemaError(f"unsupported shard version {head.get('version')}")
        base = 12 + n
        arrays = {}
        for d in head["arrays"]:
            count = int(np.prod(d["shape"]))
            arrays[d["name"]] = np.frombuffer(blob, dtype=d["dtype"], count=count,
                                              offset=base + d["offset"]).reshape(d["shape"]).copy()
        return cls(arrays, meta)

    def save(self, path):
        """Write the binary shard and its JSON schema sidecar, each atomically."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        side = sidecar_path(path)
        tmp = side.with_name(side.name + ".tmp")
        meta = dict(self.meta, n_records=len(self), record_fields=RECORD_FIELDS, landmark_fields=LANDMARK_FIELDS)
        tmp.write_text(json.dumps(meta, sort_keys=True, indent=1))
        os.replace(tmp, side)

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(sidecar_path(path).read_text())
        table = cls.from_bytes(path.read_bytes(), meta)
        if len(table) != meta.get("n_records", len(table)):
            raise SchemaError(f"{path} holds {len(table)} records, sidecar says {meta['n_records']}")
        return table


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def shard_path(out_dir, split, index):
    return Path(out_dir) / f"{split}_{index:03d}.shard"


def _shard_complete(path, cfg_hash, master):
    side = sidecar_path(path)
    if not (path.exists() and side.exists()):
        return False
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError:
        return False
    return meta.get("config_hash") == cfg_hash and meta.get("master_seed") == master


def gen_dataset(cfg: ExperimentConfig, master, split, out_dir=None, n_scenes=None, waypoints_per_scene=None,
                views_per_waypoint=None, resume=True):
    """Generate the records of every scene in ``split``.

    With ``out_dir`` each scene goes to its own shard; shards already written
    for the same config and master seed are reused, so an interrupted run
    resumes at the first missing scene. Returns the concatenated table.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    n_scenes = n_scenes if n_scenes is not None else (cfg.train_scenes if split == "train" else cfg.test_scenes)
    n_wp = waypoints_per_scene or (cfg.train_waypoints_per_scene if split == "train"
                                   else cfg.test_waypoints_per_scene)
    n_views = views_per_waypoint or cfg.views_per_waypoint
    if n_scenes < 1:
        raise GenerationError(f"split {split!r} has no scenes")
    cfg_hash = cfg.hash()
    tables = []
    fc = cfg.features
    for s in range(n_scenes):
        path = shard_path(out_dir, split, s) if out_dir is not None else None
        if path is not None and resume and _shard_complete(path, cfg_hash, master):
            logger.info("reusing %s", path)
            tables.append(RecordTable.load(path))
            continue
        bundle = build_bundle(cfg, master, split, s)
        meta = {"config_hash": cfg_hash, "master_seed": master, "split": split, "scene": s,
                "scene_seed": bundle.seed, "waypoints": n_wp, "views_per_waypoint": n_views}
        table = RecordTable.from_sweeps(iter_sweeps(bundle, cfg, master, n_wp, n_views), split, cfg.threshold,
                                        bins=fc.bins, heatmap=tuple(fc.heatmap), d_tok=10 + bundle.lmap.d_app,
                                        meta=meta)
        logger.info("%s scene %d: %d records, %.1f%% positive", split, s, len(table),
                    100.0 * table.label.mean() if len(table) else 0.0)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            table.save(path)
        tables.append(table)
    return RecordTable.concat(tables)


def load_split(out_dir, split):
    paths = sorted(Path(out_dir).glob(f"{split}_*.shard"))
    if not paths:
        raise FileNotFoundError(f"no {split} shards in {out_dir}")
    return RecordTable.concat(RecordTable.load(p) for p in paths)


def balance_indices(labels, seed):
    """Sorted indices keeping all minority records and an equal random draw from the majority."""
    y = np.asarray(labels)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise BalancingError("balancing needs both positive and negative records")
    k = min(len(pos), len(neg))
    rng = np.random.default_rng(seed)
    pos = pos if len(pos) == k else rng.choice(pos, k, replace=False)
    neg = neg if len(neg) == k else rng.choice(neg, k, replace=False)
    return np.sort(np.concatenate([pos, neg]))


def balance(dataset, seed):
    """Undersample the majority class to the minority count (deterministic per seed)."""
    if isinstance(dataset, RecordTable):
        return dataset.subset(balance_indices(dataset.label, seed))
    y = np.asarray(dataset)
    return y[balance_indices(y, seed)]


def localization_results(table: RecordTable, idx):
    """Stored outcomes as :class:`LocalizationResult` objects (no estimated pose)."""
    a = table.arrays
    return [LocalizationResult(bool(a["success"][i]), None, int(a["inlier_count"][i]),
                               float(a["pos_error_m"][i]), float(a["rot_error_deg"][i])) for i in idx]
