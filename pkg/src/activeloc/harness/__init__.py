from .config import DEFAULT_POLICIES, DEFAULT_THRESHOLDS, ExperimentConfig, load_config
from .dataset import (DatasetRecord, RecordTable, SceneBundle, WaypointSweep, balance, balance_indices, build_bundle,
                      gen_dataset, iter_sweeps, label_from_errors, load_split, sample_waypoints, sweep_waypoint)
from .evaluate import EvalReport, evaluate, evaluate_table, parse_policy, random_expectation
from .report import render_cdf_csv, render_report
from .seeds import Stream, derive_rng, derive_seed, seed_sequence
from .training import train_models

__all__ = [
    "DEFAULT_POLICIES", "DEFAULT_THRESHOLDS", "ExperimentConfig", "load_config",
    "DatasetRecord", "RecordTable", "SceneBundle", "WaypointSweep", "balance", "balance_indices", "build_bundle",
    "gen_dataset", "iter_sweeps", "label_from_errors", "load_split", "sample_waypoints", "sweep_waypoint",
    "EvalReport", "evaluate", "evaluate_table", "parse_policy", "random_expectation",
    "render_cdf_csv", "render_report",
    "Stream", "derive_rng", "derive_seed", "seed_sequence",
    "train_models",
]
