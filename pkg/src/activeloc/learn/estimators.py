"""scikit-learn compatible wrappers around the two scorer networks.

Both estimators own their clamped min-max ranges: ``fit`` freezes them from
the training inputs and ``predict_proba`` reuses them, so a saved model
carries everything needed to score new viewpoints.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import SchemaError
from ..features import NormRanges, normalize
from .models import pad_tokens
from .train import ParamStore, TrainConfig, predict_proba, schema_hash, train


def check_token_list(X, d_in=None):
    """Validate a sequence of per-viewpoint token matrices."""
    out = []
    for t in X:
        t = np.asarray(t, dtype=float)
        if t.ndim != 2:
            raise ValueError("each token set must be a 2-D array")
        if d_in is not None and len(t) and t.shape[1] != d_in:
            raise SchemaError(f"token width {t.shape[1]} does not match {d_in}")
        if not np.all(np.isfinite(t)):
            raise ValueError("token sets must be finite")
        out.append(t)
    return out


class _Scorer(ClassifierMixin, BaseEstimator):
    arch = None

    def _config(self):
        raise NotImplementedError

    def _schema(self, d_in):
        return {"arch": self.arch, "d_in": int(d_in), "feature_schema": self.feature_schema}

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def score_samples(self, X):
        """Positive-class probability, the viewpoint score."""
        return self.predict_proba(X)[:, 1]

    def save(self, path):
        check_is_fitted(self, "store_")
        self.store_.save(path)

    @classmethod
    def from_store(cls, store: ParamStore):
        cfg = TrainConfig.from_dict(store.meta["train_config"])
        est = cls(feature_schema=store.meta.get("feature_schema"), random_state=store.meta.get("random_state", 0))
        est.set_params(**{k: v for k, v in est._params_from_config(cfg).items()})
        expected = schema_hash(est._schema(store.meta["d_in"]))
        store.check_schema(expected)
        est.store_ = store
        est.ranges_ = NormRanges.from_dict(store.meta["norm_ranges"])
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = store.meta["d_in"]
        return est

    @classmethod
    def load(cls, path):
        return cls.from_store(ParamStore.load(path))

    def _finish_fit(self, store, ranges, d_in):
        store.meta["norm_ranges"] = ranges.to_dict()
        store.meta["feature_schema"] = self.feature_schema
        store.meta["random_state"] = self.random_state
        store.meta["schema_hash"] = schema_hash(self._schema(d_in))
        self.store_ = store
        self.ranges_ = ranges
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = d_in
        return self


class MLPScorer(_Scorer):
    """Histogram-input perceptron scorer (``n_in -> hidden... -> 2``, ReLU)."""

    arch = "mlp"

    def __init__(self, hidden=(128, 128), lr=1e-3, epochs=100, batch_size=64, val_fraction=0.2, balance=True,
                 random_state=0, feature_schema=None):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.balance = balance
        self.random_state = random_state
        self.feature_schema = feature_schema

    def _config(self):
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           val_fraction=self.val_fraction, balance=self.balance, hidden=tuple(self.hidden))

    @staticmethod
    def _params_from_config(cfg):
        return dict(hidden=tuple(cfg.hidden), lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                    val_fraction=cfg.val_fraction, balance=cfg.balance)

    def fit(self, X, y, groups=None):
        X = check_array(X, dtype=float)
        ranges = NormRanges.fit(X)
        store = train(normalize(X, ranges), y, "mlp", self._config(), np.random.default_rng(self.random_state),
                      groups=groups)
        return self._finish_fit(store, ranges, X.shape[1])

    def predict_proba(self, X):
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise SchemaError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict_proba("mlp", self.store_.params, normalize(X, self.ranges_, warn=False), self._config())


class VPTScorer(_Scorer):
    """Per-landmark-token transformer scorer with masked mean pooling."""

    arch = "vpt"

    def __init__(self, d_model=32, n_heads=2, n_layers=2, d_ff=64, lr=1e-3, epochs=100, batch_size=64,
                 val_fraction=0.2, balance=True, random_state=0, feature_schema=None):
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ff = d_ff
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.balance = balance
        self.random_state = random_state
        self.feature_schema = feature_schema

    def _config(self):
        return TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                           val_fraction=self.val_fraction, balance=self.balance, d_model=self.d_model,
                           n_heads=self.n_heads, n_layers=self.n_layers, d_ff=self.d_ff)

    @staticmethod
    def _params_from_config(cfg):
        return dict(d_model=cfg.d_model, n_heads=cfg.n_heads, n_layers=cfg.n_layers, d_ff=cfg.d_ff, lr=cfg.lr,
                    epochs=cfg.epochs, batch_size=cfg.batch_size, val_fraction=cfg.val_fraction,
                    balance=cfg.balance)

    def fit(self, X, y, groups=None):
        X = check_token_list(X)
        d_in = next((t.shape[1] for t in X if len(t)), None)
        if d_in is None:
            raise ValueError("no tokens to infer the input width from")
        X = check_token_list(X, d_in)
        all_tok = np.vstack([t for t in X if len(t)])
        ranges = NormRanges.fit(all_tok)
        normalize(all_tok[:1], ranges)  # warns once about degenerate columns
        Xn = [normalize(t, ranges, warn=False) if len(t) else np.zeros((0, d_in)) for t in X]
        store = train(Xn, y, "vpt", self._config(), np.random.default_rng(self.random_state), d_in=d_in,
                      groups=groups)
        return self._finish_fit(store, ranges, d_in)

    def predict_proba(self, X):
        check_is_fitted(self, "store_")
        d = self.n_features_in_
        X = check_token_list(X, d)
        Xn = [normalize(t, self.ranges_, warn=False) if len(t) else np.zeros((0, d)) for t in X]
        return predict_proba("vpt", self.store_.params, Xn, self._config())
