"""Viewpoint selection for active visual localization in simulated indoor scenes."""

__version__ = "0.1.0"

from .errors import (ActiveLocError, BalancingError, ConfigError, DegenerateInputError, EmptyMapError,
                     EmptyRequestError, GenerationError, OutOfBoundsError, SchemaError, TrainingError)
from .geom import CameraModel, Pose, ViewpointCandidate, sample_viewpoints
from .scene import Scene, SceneConfig, build_occupancy, gen_scene
from .mapping import LandmarkMap, make_mapping_trajectory, simulate_mapping
from .oracle import NoiseConfig, OracleConfig, RansacConfig, World, estimate_pose, localize
from .features import aggregate, per_landmark_features
from .policy import Policy, PolicyKind, best_possible, select

__all__ = [
    "__version__",
    "ActiveLocError", "BalancingError", "ConfigError", "DegenerateInputError", "EmptyMapError",
    "EmptyRequestError", "GenerationError", "OutOfBoundsError", "SchemaError", "TrainingError",
    "CameraModel", "Pose", "ViewpointCandidate", "sample_viewpoints",
    "Scene", "SceneConfig", "build_occupancy", "gen_scene",
    "LandmarkMap", "make_mapping_trajectory", "simulate_mapping",
    "NoiseConfig", "OracleConfig", "RansacConfig", "World", "estimate_pose", "localize",
    "aggregate", "per_landmark_features",
    "Policy", "PolicyKind", "best_possible", "select",
]
