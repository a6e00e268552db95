"""Experiment configuration: one JSON document drives every pipeline stage."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..geom import CameraModel
from ..oracle import NoiseConfig, OracleConfig, RansacConfig
from ..scene import SceneConfig

DEFAULT_THRESHOLDS = ((0.025, 1.0), (0.05, 1.0), (0.075, 1.0), (0.1, 1.0), (0.25, 2.0), (1.0, 5.0))
DEFAULT_POLICIES = ("forward", "random", "max", "max+occl", "angle", "angle+occl", "fim", "fim+occl",
                    "mlp+occl", "vpt+occl", "best")


def _build(cls, d, where):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {where}: {e}") from e


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    if isinstance(x, list):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


@dataclass(frozen=True)
class MappingConfig:
    height_m: float = 1.6
    waypoint_count: int = 60
    pitch_deg: float = -10.0
    noise_sigma_m: float = 0.01
    min_obs: int = 2
    d_app: int = 8


@dataclass(frozen=True)
class WaypointConfig:
    height_m: float = 0.5
    clearance_m: float = 0.2
    max_tries: int = 2000
    pitch_min_deg: float = -10.0
    pitch_max_deg: float = 45.0


@dataclass(frozen=True)
class FeatureConfig:
    bins: int = 16
    heatmap: tuple = (8, 8)
    n_max: int = 256
    include_descriptor: bool = True
    # per-token log counts of the whole set for the transformer
    include_context: bool = True
    cone_slack_deg: float = 5.0
    # learned scorers see the occlusion-filtered landmark set
    occlusion_filter: bool = True


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple = (128, 128)
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    val_fraction: float = 0.2
    # hold out whole training scenes for validation when there are several
    val_by_scene: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    train_scenes: int = 5
    test_scenes: int = 4
    train_waypoints_per_scene: int = 100
    test_waypoints_per_scene: int = 100
    views_per_waypoint: int = 50
    threshold: tuple = (0.1, 1.0)
    thresholds: tuple = DEFAULT_THRESHOLDS
    policies: tuple = DEFAULT_POLICIES
    voxel_size: float = 0.05
    scene: SceneConfig = field(default_factory=SceneConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    waypoints: WaypointConfig = field(default_factory=WaypointConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    mlp: ModelConfig = field(default_factory=lambda: ModelConfig(lr=1e-3, epochs=30))
    vpt: ModelConfig = field(default_factory=lambda: ModelConfig(lr=3e-3, epochs=15))

    def __post_init__(self):
        if min(self.train_scenes, self.test_scenes) < 0:
            raise ConfigError("scene counts must be non-negative")
        if min(self.train_waypoints_per_scene, self.test_waypoints_per_scene, self.views_per_waypoint) < 1:
            raise ConfigError("waypoint and view counts must be positive")
        if len(self.threshold) != 2:
            raise ConfigError("threshold must be a (distance_m, angle_deg) pair")
        if any(len(t) != 2 for t in self.thresholds):
            raise ConfigError("thresholds must be (distance_m, angle_deg) pairs")

    @property
    def oracle_noise(self) -> NoiseConfig:
        return self.oracle.noise

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("experiment config must be a JSON object")
        nested = {"scene": SceneConfig, "camera": CameraModel, "mapping": MappingConfig,
                  "waypoints": WaypointConfig, "features": FeatureConfig, "mlp": ModelConfig, "vpt": ModelConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in nested:
                kw[k] = _build(nested[k], v, k)
            elif k == "oracle":
                if not isinstance(v, dict) or set(v) - {"noise", "ransac"}:
                    raise ConfigError("oracle must hold only 'noise' and 'ransac'")
                kw[k] = OracleConfig(_build(NoiseConfig, v.get("noise"), "oracle.noise"),
                                     _build(RansacConfig, v.get("ransac"), "oracle.ransac"))
            elif k in ("threshold", "policies"):
                kw[k] = tuple(v)
            elif k == "thresholds":
                kw[k] = tuple(tuple(t) for t in v)
            else:
                kw[k] = v
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "camera":
                v = v.to_dict()
            elif f.name == "oracle":
                v = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            out[f.name] = _plain(v)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    """Read an experiment config; a missing or malformed file is a :class:`ConfigError`."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(d)
