"""MLP and viewpoint-transformer scorers built on the autograd engine."""
from __future__ import annotations

import numpy as np

from ..errors import SchemaError
from . import autograd as ag


def _dense(rng, n_in, n_out):
    return rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in), np.zeros(n_out)


def init_mlp(n_in, hidden=(128, 128), rng=None, zero_last=False):
    rng = rng if rng is not None else np.random.default_rng(0)
    params = {}
    sizes = [n_in, *hidden, 2]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        W, bias = _dense(rng, a, b)
        if zero_last and i == len(sizes) - 2:
            W = np.zeros_like(W)
        params[f"W{i}"] = W
        params[f"b{i}"] = bias
    return params


def init_vpt(d_in, d_model=32, n_heads=2, n_layers=2, d_ff=64, rng=None):
    if d_model % n_heads:
        raise ValueError("d_model must be divisible by n_heads")
    rng = rng if rng is not None else np.random.default_rng(0)
    p = {}
    p["emb_W"], p["emb_b"] = rng.standard_normal((d_in, d_model)) / np.sqrt(d_in), np.zeros(d_model)
    for layer in range(n_layers):
        pre = f"l{layer}."
        for name in ("q", "k", "v", "o"):
            p[pre + name + "_W"] = rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)
            p[pre + name + "_b"] = np.zeros(d_model)
        p[pre + "ln1_g"], p[pre + "ln1_b"] = np.ones(d_model), np.zeros(d_model)
        p[pre + "ff1_W"], p[pre + "ff1_b"] = _dense(rng, d_model, d_ff)
        p[pre + "ff2_W"] = rng.standard_normal((d_ff, d_model)) / np.sqrt(d_ff)
        p[pre + "ff2_b"] = np.zeros(d_model)
        p[pre + "ln2_g"], p[pre + "ln2_b"] = np.ones(d_model), np.zeros(d_model)
    p["null"] = 0.1 * rng.standard_normal(d_model)
    p["head_W"], p["head_b"] = rng.standard_normal((d_model, 2)) / np.sqrt(d_model), np.zeros(2)
    return p


def _tensors(params):
    return {k: (v if isinstance(v, ag.Tensor) else ag.Tensor(v)) for k, v in params.items()}


def mlp_logits(params, X):
    """Logits graph for a batch ``X (B, n_in)``; ``params`` may hold tensors or arrays."""
    p = _tensors(params)
    n_layers = sum(1 for k in p if k.startswith("W"))
    if p["W0"].shape[0] != np.shape(X)[-1]:
        raise SchemaError(f"MLP expects {p['W0'].shape[0]} inputs, got {np.shape(X)[-1]}")
    h = ag.as_tensor(X)
    for i in range(n_layers):
        h = ag.matmul(h, p[f"W{i}"]) + p[f"b{i}"]
        if i < n_layers - 1:
            h = ag.relu(h)
    return h


def mlp_forward(params, X):
    """Two-class probabilities for aggregated features ``X`` (one row or a batch)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    z = mlp_logits(params, np.atleast_2d(X)).data
    prob = ag._softmax(z)
    return prob[0] if single else prob


def vpt_logits(params, tokens, mask, n_heads=2):
    """Logits graph for padded tokens ``(B, N, d_in)`` with a boolean ``mask (B, N)``."""
    p = _tensors(params)
    tokens = np.asarray(tokens, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if tokens.shape[1] == 0:
        tokens = np.zeros((tokens.shape[0], 1, tokens.shape[2]))
        mask = np.zeros((tokens.shape[0], 1), dtype=bool)
    if tokens.shape[-1] != p["emb_W"].shape[0]:
        raise SchemaError(f"VPT expects token width {p['emb_W'].shape[0]}, got {tokens.shape[-1]}")
    B, N, _ = tokens.shape
    D = p["emb_W"].shape[1]
    dh = D // n_heads
    tokens = np.where(mask[..., None], tokens, 0.0)
    x = ag.matmul(ag.Tensor(tokens), p["emb_W"]) + p["emb_b"]
    n_layers = sum(1 for k in p if k.endswith(".q_W"))

    def heads(t):
        return ag.transpose(ag.reshape(t, (B, N, n_heads, dh)), (0, 2, 1, 3))

    for layer in range(n_layers):
        pre = f"l{layer}."
        q = heads(ag.matmul(x, p[pre + "q_W"]) + p[pre + "q_b"])
        k = heads(ag.matmul(x, p[pre + "k_W"]) + p[pre + "k_b"])
        v = heads(ag.matmul(x, p[pre + "v_W"]) + p[pre + "v_b"])
        a = ag.masked_attention(q, k, v, mask[:, None, :])
        a = ag.reshape(ag.transpose(a, (0, 2, 1, 3)), (B, N, D))
        a = ag.matmul(a, p[pre + "o_W"]) + p[pre + "o_b"]
        x = ag.layernorm(x + a, p[pre + "ln1_g"], p[pre + "ln1_b"])
        f = ag.relu(ag.matmul(x, p[pre + "ff1_W"]) + p[pre + "ff1_b"])
        f = ag.matmul(f, p[pre + "ff2_W"]) + p[pre + "ff2_b"]
        x = ag.layernorm(x + f, p[pre + "ln2_g"], p[pre + "ln2_b"])
    pooled = ag.masked_mean_pool(x, mask, p["null"])
    return ag.matmul(pooled, p["head_W"]) + p["head_b"]


def pad_tokens(token_list, d_in=None):
    """Stack variable-length token matrices into ``(B, N_max, d)`` plus a mask."""
    if d_in is None:
        d_in = next((t.shape[1] for t in token_list if np.ndim(t) == 2 and t.shape[1]), 0)
    n = max([len(t) for t in token_list] + [1])
    out = np.zeros((len(token_list), n, d_in))
    mask = np.zeros((len(token_list), n), dtype=bool)
    for i, t in enumerate(token_list):
        if len(t):
            out[i, :len(t)] = t
            mask[i, :len(t)] = True
    return out, mask


def vpt_forward(params, tokens, mask=None, n_heads=2):
    """Two-class probabilities from the viewpoint transformer.

    ``tokens`` is either a padded ``(B, N, d)`` array with ``mask`` or a single
    ``(N, d)`` matrix (then all rows are real unless ``mask`` says otherwise).
    """
    tokens = np.asarray(tokens, dtype=float)
    single = tokens.ndim == 2
    if single:
        tokens = tokens[None]
        mask = np.ones(tokens.shape[:2], dtype=bool) if mask is None else np.asarray(mask, bool)[None]
    elif mask is None:
        mask = np.ones(tokens.shape[:2], dtype=bool)
    prob = ag._softmax(vpt_logits(params, tokens, mask, n_heads).data)
    return prob[0] if single else prob
