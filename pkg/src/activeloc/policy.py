"""Viewpoint-selection policies and the sample-and-evaluate selector."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DegenerateInputError, EmptyRequestError, SchemaError
from .features import (AggregationRanges, LandmarkFeatures, aggregate, count_in_seen_range, encode_tokens,
                       per_landmark_features)
from .geom import CameraModel, Pose
from .learn.estimators import MLPScorer, VPTScorer
from .oracle import LocalizationResult, OracleConfig, World, localize, projection_jacobian
from .scene import rays_occluded

LOG_DET_DAMPING = 1e-9
SCALARIZATIONS = ("trace", "log_det_damped", "min_eig")


class PolicyKind(str, Enum):
    FORWARD = "forward"
    RANDOM = "random"
    MAX = "max"
    ANGLE = "angle"
    FIM = "fim"
    MLP = "mlp"
    VPT = "vpt"
    BEST_POSSIBLE = "best"


@dataclass(frozen=True, eq=False)
class Policy:
    kind: PolicyKind
    occlusion_filter: bool = False
    scalarization: str = "trace"
    pixel_sigma: float = 1.0
    model: object = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.scalarization not in SCALARIZATIONS:
            raise ValueError(f"unknown scalarization {self.scalarization!r}")
        if self.kind in (PolicyKind.MLP, PolicyKind.VPT) and self.model is None:
            raise ValueError(f"{self.kind.value} policy needs a trained model")

    @property
    def deployable(self):
        """Best-possible needs ground truth and is for evaluation only."""
        return self.kind is not PolicyKind.BEST_POSSIBLE

    @property
    def name(self):
        if self.kind in (PolicyKind.FORWARD, PolicyKind.RANDOM, PolicyKind.BEST_POSSIBLE):
            return self.kind.value
        return self.kind.value + ("+occl" if self.occlusion_filter else "")


@dataclass(frozen=True, eq=False)
class ScoredCandidate:
    candidate: object
    score: float
    all_failed: bool = False


def _features(lmap, candidate, cam, grid, occl, occluded=None):
    return per_landmark_features(lmap, candidate, cam, occlusion_filter=occl, grid=grid, occluded=occluded)


def score_max(lmap, candidate, cam, grid=None, occl=False, occluded=None) -> int:
    return len(_features(lmap, candidate, cam, grid, occl, occluded))


def score_angle(lmap, candidate, cam, grid=None, occl=False, occluded=None) -> int:
    return count_in_seen_range(_features(lmap, candidate, cam, grid, occl, occluded))


def fim_from_camera_points(Xc, cam: CameraModel, pixel_sigma=1.0):
    """Per-point ``(n, 6, 6)`` information matrices for camera-frame points."""
    Xc = np.atleast_2d(np.asarray(Xc, dtype=float))
    if np.any(Xc[:, 2] <= 0):
        raise DegenerateInputError("landmark at or behind the camera plane")
    J = projection_jacobian(Xc, cam)
    return np.einsum("nki,nkj->nij", J, J) / pixel_sigma**2


def fim_single(map_point, candidate_pose: Pose, cam: CameraModel, pixel_sigma=1.0):
    """Fisher information ``J^T J / sigma^2`` of one landmark about the 6-DoF pose (rotation, translation)."""
    Xc = candidate_pose.to_camera(np.asarray(map_point, dtype=float).reshape(1, 3))
    return fim_from_camera_points(Xc, cam, pixel_sigma)[0]


def scalarize(info, mode="trace"):
    if mode == "trace":
        return float(np.trace(info))
    if mode == "log_det_damped":
        sign, logdet = np.linalg.slogdet(info + LOG_DET_DAMPING * np.eye(len(info)))
        return float(logdet) if sign > 0 else -math.inf
    if mode == "min_eig":
        return float(np.linalg.eigvalsh(info)[0])
    raise ValueError(f"unknown scalarization {mode!r}")


def fim_score_features(features: LandmarkFeatures, cam, pixel_sigma=1.0, scalarization="trace"):
    if len(features) == 0:
        return scalarize(np.zeros((6, 6)), scalarization)
    if scalarization == "trace":
        # trace is additive: sum per-landmark traces directly
        return float(np.sum(np.trace(fim_from_camera_points(features.xc, cam, pixel_sigma), axis1=1, axis2=2)))
    return scalarize(fim_from_camera_points(features.xc, cam, pixel_sigma).sum(axis=0), scalarization)


def score_fim(lmap, candidate, cam, grid=None, occl=False, pixel_sigma=1.0, scalarization="trace",
              occluded=None) -> float:
    feats = _features(lmap, candidate, cam, grid, occl, occluded)
    return fim_score_features(feats, cam, pixel_sigma, scalarization)


def learned_scores(model, feature_sets):
    """Positive-class probabilities for a batch of candidates' landmark features."""
    schema = model.feature_schema or {}
    if isinstance(model, MLPScorer):
        if schema.get("kind", "aggregate") != "aggregate":
            raise SchemaError("MLP model was not trained on aggregated features")
        ranges = AggregationRanges(**{k: tuple(v) for k, v in schema.get("ranges", {}).items()})
        X = np.array([aggregate(f, schema.get("bins", 16), tuple(schema.get("heatmap", (8, 8))), ranges).vector()
                      for f in feature_sets])
        return model.predict_proba(X)[:, 1]
    if isinstance(model, VPTScorer):
        if schema.get("kind", "tokens") != "tokens":
            raise SchemaError("VPT model was not trained on token features")
        toks = [encode_tokens(f, schema.get("n_max", 256), schema.get("include_descriptor", True),
                              schema.get("include_context", False)) for f in feature_sets]
        return model.predict_proba(toks)[:, 1]
    raise SchemaError(f"unsupported model type {type(model).__name__}")


def score_learned(model, lmap, candidate, cam, grid=None, occl=False, occluded=None) -> float:
    return float(learned_scores(model, [_features(lmap, candidate, cam, grid, occl, occluded)])[0])


def score_candidates(policy: Policy, lmap, grid, cam, position_estimate, candidates, next_waypoint=None,
                     seed=None, features=None):
    """Scores of every candidate under ``policy``.

    ``features`` optionally supplies precomputed per-candidate landmark
    features in the policy's visibility mode.
    """
    kind = policy.kind
    n = len(candidates)
    if kind is PolicyKind.BEST_POSSIBLE:
        raise ValueError("best-possible needs oracle access; use best_possible()")
    if kind is PolicyKind.RANDOM:
        if seed is None:
            raise ValueError("the random policy needs an explicit seed")
        s = np.zeros(n)
        s[np.random.default_rng(seed).integers(n)] = 1.0
        return s
    if kind is PolicyKind.FORWARD:
        if next_waypoint is None:
            raise ValueError("the forward policy needs the next waypoint")
        d = np.asarray(next_waypoint, dtype=float) - np.asarray(position_estimate, dtype=float)
        nd = np.linalg.norm(d)
        if nd == 0:
            raise DegenerateInputError("next waypoint coincides with the current position")
        return np.array([float(c.pose.forward @ d) / nd for c in candidates])
    if features is None:
        occluded = None
        if policy.occlusion_filter:
            occluded = rays_occluded(grid, candidates[0].pose.position, grid.clip_inside(lmap.positions))
        features = [_features(lmap, c, cam, grid, policy.occlusion_filter, occluded) for c in candidates]
    elif policy.occlusion_filter:
        features = [f.unoccluded() if np.any(f.occluded) else f for f in features]
    if kind is PolicyKind.MAX:
        return np.array([len(f) for f in features], dtype=float)
    if kind is PolicyKind.ANGLE:
        return np.array([count_in_seen_range(f) for f in features], dtype=float)
    if kind is PolicyKind.FIM:
        return np.array([fim_score_features(f, cam, policy.pixel_sigma, policy.scalarization) for f in features])
    return np.asarray(learned_scores(policy.model, features), dtype=float)


def select(policy: Policy, lmap, grid, cam, position_estimate, candidates, next_waypoint=None, seed=None,
           features=None) -> ScoredCandidate:
    """Highest-scoring candidate; ties go to the lowest index."""
    if len(candidates) == 0:
        raise EmptyRequestError("no candidates to select from")
    scores = score_candidates(policy, lmap, grid, cam, position_estimate, candidates, next_waypoint, seed,
                              features)
    k = int(np.argmax(scores))
    return ScoredCandidate(candidates[k], float(scores[k]))


def rank_results(results):
    """Index of the result with the smallest (position, rotation) error; failures rank last."""
    if len(results) == 0:
        raise EmptyRequestError("no localization results")
    keys = [(r.pos_error_m, r.rot_error_deg) if r.success else (math.inf, math.inf) for r in results]
    k = min(range(len(keys)), key=lambda i: (keys[i], i))
    return k, not any(r.success for r in results)


def best_possible(lmap, world: World, cam, true_position, candidates, oracle_config=OracleConfig(), rng=None,
                  results=None) -> ScoredCandidate:
    """Oracle choice: localize from every candidate and keep the most accurate.

    ``results`` may pass already-computed localization results (one per
    candidate) so that the choice is paired with other policies' draws.
    """
    if len(candidates) == 0:
        raise EmptyRequestError("no candidates to select from")
    if results is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        streams = rng.spawn(len(candidates))
        results = [localize(world, lmap, c.pose, cam, oracle_config.noise, oracle_config.ransac, s)
                   for c, s in zip(candidates, streams)]
    k, all_failed = rank_results(results)
    r: LocalizationResult = results[k]
    return ScoredCandidate(candidates[k], -r.pos_error_m if r.success else 0.0, all_failed)
