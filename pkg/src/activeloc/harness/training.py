"""Training the learned scorers from generated records."""
from __future__ import annotations

import logging

from ..learn.estimators import MLPScorer, VPTScorer
from .config import ExperimentConfig
from .dataset import RecordTable, balance
from .seeds import Stream, derive_seed

logger = logging.getLogger(__name__)


def feature_schemas(cfg: ExperimentConfig):
    fc = cfg.features
    agg = {"kind": "aggregate", "bins": fc.bins, "heatmap": list(fc.heatmap),
           "occlusion_filter": fc.occlusion_filter}
    tok = {"kind": "tokens", "n_max": fc.n_max, "include_descriptor": fc.include_descriptor,
           "include_context": fc.include_context, "occlusion_filter": fc.occlusion_filter}
    return agg, tok


def train_models(table: RecordTable, cfg: ExperimentConfig, master, kinds=("mlp", "vpt")):
    """Balance the records and fit the requested scorers; returns ``{kind: estimator}``."""
    data = balance(table, derive_seed(master, "train", stream=Stream.BALANCE))
    logger.info("training on %d balanced records (from %d)", len(data), len(table))
    agg_schema, tok_schema = feature_schemas(cfg)
    occl = cfg.features.occlusion_filter
    seed = derive_seed(master, "train", stream=Stream.TRAINING)
    scenes = data.arrays["scene"]
    multi = len(set(scenes.tolist())) > 1
    models = {}
    if "mlp" in kinds:
        m = cfg.mlp
        models["mlp"] = MLPScorer(hidden=tuple(m.hidden), lr=m.lr, epochs=m.epochs, batch_size=m.batch_size,
                                  val_fraction=m.val_fraction, random_state=seed,
                                  feature_schema=agg_schema).fit(data.aggregates(occl), data.label,
                                                                 scenes if m.val_by_scene and multi else None)
    if "vpt" in kinds:
        m = cfg.vpt
        fc = cfg.features
        toks = data.token_sets(occl, fc.n_max, fc.include_descriptor, fc.include_context)
        models["vpt"] = VPTScorer(d_model=m.d_model, n_heads=m.n_heads, n_layers=m.n_layers, d_ff=m.d_ff, lr=m.lr,
                                  epochs=m.epochs, batch_size=m.batch_size, val_fraction=m.val_fraction,
                                  random_state=seed, feature_schema=tok_schema).fit(
                                      toks, data.label, scenes if m.val_by_scene and multi else None)
    return models
