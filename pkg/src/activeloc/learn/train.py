"""Training loop, parameter store and its on-disk format."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import GroupShuffleSplit

from ..errors import SchemaError, TrainingError
from . import autograd as ag
from .models import init_mlp, init_vpt, mlp_forward, mlp_logits, pad_tokens, vpt_forward, vpt_logits

PARAM_MAGIC = b"AVLPRM01"
STORE_VERSION = "1"


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    val_fraction: float = 0.2
    balance: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # architecture
    hidden: tuple = (128, 128)
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def schema_hash(schema: dict) -> str:
    return hashlib.sha256(json.dumps(schema, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ParamStore:
    """Named parameter arrays plus the metadata needed to use them safely."""

    params: dict
    meta: dict = field(default_factory=dict)
    version: str = STORE_VERSION

    def __post_init__(self):
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"parameter {k} has non-finite entries")

    @property
    def schema_hash(self):
        return self.meta.get("schema_hash")

    def check_schema(self, expected_hash):
        if self.schema_hash != expected_hash:
            raise SchemaError(f"model schema {self.schema_hash} does not match features {expected_hash}")

    def to_bytes(self):
        names = sorted(self.params)
        directory, offset = [], 0
        for n in names:
            a = np.asarray(self.params[n], dtype="<f8")
            directory.append({"name": n, "shape": list(a.shape), "offset": offset, "dtype": "<f8"})
            offset += a.nbytes
        head = json.dumps({"version": self.version, "tensors": directory}, sort_keys=True).encode()
        body = b"".join(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes() for n in names)
        return PARAM_MAGIC + struct.pack("<I", len(head)) + head + body

    @classmethod
    def from_bytes(cls, blob, meta=None):
        if blob[:8] != PARAM_MAGIC:
            raise SchemaError("not a parameter file")
        (n,) = struct.unpack_from("<I", blob, 8)
        head = json.loads(blob[12:12 + n])
        base = 12 + n
        params = {}
        for t in head["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            params[t["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                              offset=base + t["offset"]).reshape(t["shape"]).astype(float)
        return cls(params, meta or {}, head["version"])

    def save(self, path):
        path = Path(path)
        path.write_bytes(self.to_bytes())
        path.with_suffix(".json").write_text(json.dumps(self.meta, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls.from_bytes(path.read_bytes(), meta)


def undersample(y, rng):
    """Indices keeping every minority example and an equal-size random subset of the majority."""
    y = np.asarray(y)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise TrainingError("both classes are required")
    k = min(len(pos), len(neg))
    keep = np.concatenate([pos if len(pos) == k else np.sort(rng.choice(pos, k, replace=False)),
                           neg if len(neg) == k else np.sort(rng.choice(neg, k, replace=False))])
    return np.sort(keep)


def _forward_logits(arch, params, X, idx, cfg):
    if arch == "mlp":
        return mlp_logits(params, X[idx])
    tok, mask = pad_tokens([X[i] for i in idx], params["emb_W"].shape[0])
    return vpt_logits(params, tok, mask, cfg.n_heads)


def predict_proba(arch, params, X, cfg, batch=256):
    out = []
    n = len(X)
    for s in range(0, n, batch):
        idx = np.arange(s, min(n, s + batch))
        if arch == "mlp":
            out.append(mlp_forward(params, X[idx]))
        else:
            tok, mask = pad_tokens([X[i] for i in idx], params["emb_W"].shape[0])
            out.append(vpt_forward(params, tok, mask, cfg.n_heads))
    return np.vstack(out) if out else np.zeros((0, 2))


def train(X, y, arch, config: TrainConfig = TrainConfig(), rng=None, d_in=None, groups=None):
    """Fit a two-class scorer with Adam on cross-entropy.

    ``X`` is a ``(n, d)`` array for ``arch="mlp"`` or a list of ``(n_i, d)``
    token matrices for ``arch="vpt"``; features must already be normalized.
    The parameters with the best validation accuracy are returned. With
    ``groups`` the validation split holds out whole groups (e.g. scenes).
    """
    if arch not in ("mlp", "vpt"):
        raise ValueError(f"unknown architecture {arch!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise TrainingError("training data contains a single class")
    if arch == "mlp":
        X = np.asarray(X, dtype=float)
    else:
        X = list(X)
    idx = undersample(y, rng) if config.balance else np.arange(len(y))
    idx = rng.permutation(idx)
    if groups is not None and config.val_fraction > 0:
        groups = np.asarray(groups)
        if len(groups) != len(y):
            raise ValueError(f"groups has {len(groups)} entries for {len(y)} labels")
        g = groups[idx]
        if len(np.unique(g)) < 2:
            raise TrainingError("a grouped validation split needs at least two groups")
        split = GroupShuffleSplit(1, test_size=config.val_fraction, random_state=int(rng.integers(2**31)))
        tr_pos, val_pos = next(split.split(idx, groups=g))
        val, tr = np.sort(idx[val_pos]), idx[tr_pos]
    else:
        n_val = int(round(config.val_fraction * len(idx)))
        val, tr = np.sort(idx[:n_val]), idx[n_val:]
    if len(tr) == 0:
        raise TrainingError("no training examples left after the validation split")

    if arch == "mlp":
        d_in = X.shape[1]
        params = init_mlp(d_in, config.hidden, rng)
    else:
        d_in = d_in or next(t.shape[1] for t in X if np.ndim(t) == 2)
        params = init_vpt(d_in, config.d_model, config.n_heads, config.n_layers, config.d_ff, rng)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    Xv = X[val] if arch == "mlp" else [X[i] for i in val]
    best = ({k: a.copy() for k, a in params.items()}, -1.0, -1)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(tr)
        losses = []
        for s in range(0, len(order), config.batch_size):
            b = order[s:s + config.batch_size]
            tensors = {k: ag.parameter(a) for k, a in params.items()}
            loss = ag.cross_entropy(_forward_logits(arch, tensors, X, b, config), y[b])
            grads = ag.grad(loss, tensors)
            losses.append(float(loss.data) * len(b))
            step += 1
            c1 = 1 - config.beta1**step
            c2 = 1 - config.beta2**step
            for k in params:
                g = grads[k]
                m[k] = config.beta1 * m[k] + (1 - config.beta1) * g
                v2[k] = config.beta2 * v2[k] + (1 - config.beta2) * g * g
                params[k] = params[k] - config.lr * (m[k] / c1) / (np.sqrt(v2[k] / c2) + config.eps)
        train_loss = sum(losses) / len(order)
        if len(val):
            acc = float(np.mean(predict_proba(arch, params, Xv, config).argmax(axis=1) == y[val]))
        else:
            acc = None
        history.append({"epoch": epoch, "train_loss": train_loss, "val_acc": acc})
        if acc is None or acc > best[1]:
            best = ({k: a.copy() for k, a in params.items()}, acc, epoch)
    meta = {
        "arch": arch,
        "d_in": int(d_in),
        "train_config": config.to_dict(),
        "best_val_acc": best[1],
        "best_epoch": best[2],
        "n_train": int(len(tr)),
        "n_val": int(len(val)),
        "history": history,
    }
    return ParamStore(best[0], meta)
