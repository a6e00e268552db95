"""Per-landmark viewpoint features, fixed-size aggregation and min-max scaling."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geom import CameraModel, Pose, angle_between_deg
from .mapping import LandmarkMap
from .scene import rays_occluded

logger = logging.getLogger(__name__)

TOKEN_FIELDS = ("distance", "view_angle", "dist_min", "dist_max", "ang_min", "ang_max",
                "pixel_u_norm", "pixel_v_norm", "dir_deviation", "in_seen_cone")


@dataclass(eq=False)
class LandmarkFeatures:
    """Features of the mapped landmarks inside one candidate's frustum (one row per landmark)."""

    ids: np.ndarray
    points: np.ndarray
    xc: np.ndarray  # camera-frame coordinates
    distance: np.ndarray
    view_angle: np.ndarray
    dist_min: np.ndarray
    dist_max: np.ndarray
    ang_min: np.ndarray
    ang_max: np.ndarray
    pixel_u_norm: np.ndarray
    pixel_v_norm: np.ndarray
    dir_deviation: np.ndarray
    in_seen_cone: np.ndarray
    descriptor: np.ndarray
    occluded: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, idx):
        return LandmarkFeatures(**{k: v[idx] for k, v in vars(self).items()})

    def unoccluded(self):
        return self.subset(~self.occluded)

    def tokens(self, include_descriptor=True):
        cols = [np.asarray(getattr(self, f), dtype=float) for f in TOKEN_FIELDS]
        num = np.column_stack(cols) if len(self) else np.zeros((0, len(TOKEN_FIELDS)))
        if include_descriptor:
            return np.hstack([num, self.descriptor.reshape(len(self), self.descriptor.shape[-1])])
        return num

    @classmethod
    def empty(cls, d_app=8):
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)), z, z, z, z, z, z, z, z, z,
                   z, np.zeros((0, d_app)), np.zeros(0, dtype=bool))


def per_landmark_features(lmap: LandmarkMap, candidate, cam: CameraModel, occlusion_filter=False, grid=None,
                          occluded=None, cone_slack_deg=5.0) -> LandmarkFeatures:
    """Features for every mapped landmark in the candidate frustum.

    With ``occlusion_filter`` the landmarks whose ray from the camera crosses
    occupied space are dropped. ``occluded`` may carry the per-landmark
    occlusion mask for the candidate position, shared by all candidates there.
    """
    pose = candidate.pose if hasattr(candidate, "pose") else candidate
    xc = pose.to_camera(lmap.positions)
    uv, ok = cam.project_camera_points(xc)
    idx = np.flatnonzero(ok)
    if occluded is not None:
        occ = np.asarray(occluded, dtype=bool)[idx]
    elif grid is not None:
        occ = rays_occluded(grid, pose.position, grid.clip_inside(lmap.positions[idx])) if len(idx) \
            else np.zeros(0, dtype=bool)
    else:
        if occlusion_filter:
            raise ValueError("occlusion filtering needs an occupancy grid or a precomputed mask")
        occ = np.zeros(len(idx), dtype=bool)
    if occlusion_filter:
        idx, occ = idx[~occ], occ[~occ]
    pts = lmap.positions[idx]
    rel = pose.position - pts
    dist = np.linalg.norm(rel, axis=1)
    view = angle_between_deg(pose.forward[None, :], -rel)
    dev = angle_between_deg(rel, lmap.mean_view_dir[idx])
    return LandmarkFeatures(
        ids=lmap.ids[idx],
        points=pts,
        xc=xc[idx],
        distance=dist,
        view_angle=np.asarray(view, dtype=float).reshape(-1),
        dist_min=lmap.dist_min[idx],
        dist_max=lmap.dist_max[idx],
        ang_min=lmap.ang_min[idx],
        ang_max=lmap.ang_max[idx],
        pixel_u_norm=uv[idx, 0] / cam.width,
        pixel_v_norm=uv[idx, 1] / cam.height,
        dir_deviation=np.asarray(dev, dtype=float).reshape(-1),
        in_seen_cone=(dev <= lmap.cone_half_angle[idx] + cone_slack_deg).astype(float).reshape(-1),
        descriptor=lmap.descriptors[idx],
        occluded=occ,
    )


def count_in_seen_range(features: LandmarkFeatures) -> int:
    return int(np.count_nonzero(np.asarray(features.in_seen_cone) == 1))


@dataclass(frozen=True)
class AggregationRanges:
    """Fixed histogram ranges; values outside are counted in the edge bins."""

    distance: tuple = (0.0, 15.0)
    view_angle: tuple = (0.0, 60.0)
    dist_delta: tuple = (-5.0, 5.0)
    angle_delta: tuple = (-60.0, 60.0)


def _hist(values, lo, hi, bins):
    idx = np.clip(np.floor((np.asarray(values, dtype=float) - lo) / (hi - lo) * bins), 0, bins - 1).astype(int)
    return np.bincount(idx, minlength=bins).astype(float)


@dataclass(eq=False)
class AggregatedFeature:
    dist_hist: np.ndarray
    angle_hist: np.ndarray
    dist_range_hists: np.ndarray  # (2, B): distance - dist_min, distance - dist_max
    angle_range_hists: np.ndarray  # (2, B)
    pixel_heatmap: np.ndarray  # (H * W,), row-major over (v, u)
    seen_count: float

    def vector(self):
        return np.concatenate([self.dist_hist, self.angle_hist, self.dist_range_hists.ravel(),
                               self.angle_range_hists.ravel(), self.pixel_heatmap, [self.seen_count]])


def aggregate(features: LandmarkFeatures, bins=16, heatmap=(8, 8), ranges=AggregationRanges()):
    """Fixed-size histogram summary of a variable-size landmark set (descriptors excluded)."""
    if bins < 2 or heatmap[0] < 2 or heatmap[1] < 2:
        raise ValueError("need at least 2 bins and a 2x2 heatmap")
    f = features
    h, w = heatmap
    rows = np.clip(np.floor(np.asarray(f.pixel_v_norm) * h), 0, h - 1).astype(int)
    cols = np.clip(np.floor(np.asarray(f.pixel_u_norm) * w), 0, w - 1).astype(int)
    heat = np.bincount(rows * w + cols, minlength=h * w).astype(float)
    return AggregatedFeature(
        dist_hist=_hist(f.distance, *ranges.distance, bins),
        angle_hist=_hist(f.view_angle, *ranges.view_angle, bins),
        dist_range_hists=np.stack([_hist(f.distance - f.dist_min, *ranges.dist_delta, bins),
                                   _hist(f.distance - f.dist_max, *ranges.dist_delta, bins)]),
        angle_range_hists=np.stack([_hist(f.view_angle - f.ang_min, *ranges.angle_delta, bins),
                                    _hist(f.view_angle - f.ang_max, *ranges.angle_delta, bins)]),
        pixel_heatmap=heat,
        seen_count=float(count_in_seen_range(f)),
    )


@dataclass(frozen=True)
class NormRanges:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0))

    def to_dict(self):
        return {"lo": np.asarray(self.lo).tolist(), "hi": np.asarray(self.hi).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))


def normalize(X, norm_ranges: NormRanges, warn=True):
    """Clamped min-max scaling to ``[0, 1]`` along the last axis.

    Columns with a degenerate range map to 0 (with a warning unless ``warn`` is off).
    """
    X = np.asarray(X, dtype=float)
    lo = np.asarray(norm_ranges.lo, dtype=float)
    hi = np.asarray(norm_ranges.hi, dtype=float)
    span = hi - lo
    bad = ~(span > 0)
    if warn and np.any(bad):
        logger.warning("degenerate normalization range in %d column(s); mapping them to 0", int(bad.sum()))
    out = np.clip((X - lo) / np.where(bad, 1.0, span), 0.0, 1.0)
    return np.where(bad, 0.0, out)


class Aggregator(TransformerMixin, BaseEstimator):
    """Turn a sequence of :class:`LandmarkFeatures` into fixed-size histogram rows."""

    def __init__(self, bins=16, heatmap_shape=(8, 8), ranges=None):
        self.bins = bins
        self.heatmap_shape = heatmap_shape
        self.ranges = ranges

    def fit(self, X, y=None):
        self.n_features_out_ = 6 * self.bins + self.heatmap_shape[0] * self.heatmap_shape[1] + 1
        return self

    def transform(self, X):
        ranges = self.ranges or AggregationRanges()
        return np.array([aggregate(f, self.bins, self.heatmap_shape, ranges).vector() for f in X]).reshape(
            len(X), -1)


class TokenEncoder(TransformerMixin, BaseEstimator):
    """Per-landmark token matrices, keeping the ``n_max`` nearest landmarks."""

    def __init__(self, n_max=256, include_descriptor=True, include_context=False):
        self.n_max = n_max
        self.include_descriptor = include_descriptor
        self.include_context = include_context

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [encode_tokens(f, self.n_max, self.include_descriptor, self.include_context) for f in X]


CONTEXT_FIELDS = ("log_count", "log_seen_count")


def encode_token_matrix(tok, n_max=256, include_descriptor=True, include_context=False):
    """Truncate a full token matrix (numeric fields then descriptor) to the nearest ``n_max`` rows.

    With ``include_context`` every row also carries ``log(1 + n)`` of the
    landmark count and of the in-cone count of the whole set, which a mean
    pool cannot recover on its own.
    """
    tok = np.asarray(tok, dtype=float)
    n_num = len(TOKEN_FIELDS)
    ctx = [np.log1p(len(tok)), np.log1p(np.count_nonzero(tok[:, n_num - 1] == 1))]
    if len(tok) > n_max:
        tok = tok[np.sort(np.argsort(tok[:, 0], kind="stable")[:n_max])]
    if not include_descriptor:
        tok = tok[:, :n_num]
    if include_context:
        tok = np.hstack([tok, np.tile(ctx, (len(tok), 1))])
    return tok


def encode_tokens(features: LandmarkFeatures, n_max=256, include_descriptor=True, include_context=False):
    return encode_token_matrix(features.tokens(True), n_max, include_descriptor, include_context)


class ClampedMinMaxScaler(TransformerMixin, BaseEstimator):
    """Min-max scaler whose ranges are frozen at fit time and clamped at transform time."""

    def fit(self, X, y=None):
        X = np.vstack(X) if isinstance(X, list) else np.asarray(X, dtype=float)
        self.ranges_ = NormRanges.fit(X)
        return self

    def transform(self, X):
        if isinstance(X, list):
            return [normalize(x, self.ranges_) for x in X]
        return normalize(X, self.ranges_)
