"""A small reverse-mode differentiation engine over numpy arrays.

Only the primitives needed by the scorer networks are provided; each records
its parents and a closure that pushes the output gradient back to them.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=float, copy=True)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=float), requires_grad=True, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def backward():
        a._accum(_unbroadcast(out.grad, a.shape))
        b._accum(_unbroadcast(out.grad, b.shape))

    out._backward = backward
    return out


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def backward():
        a._accum(_unbroadcast(out.grad * b.data, a.shape))
        b._accum(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a, b):
    """Batched matrix product with numpy broadcasting of the leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, (a, b))

    def backward():
        g = out.grad
        a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    out._backward = backward
    return out


def relu(x):
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), (x,))
    out._backward = lambda: x._accum(out.grad * mask)
    return out


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape), (x,))
    out._backward = lambda: x._accum(out.grad.reshape(x.shape))
    return out


def transpose(x, axes):
    inv = np.argsort(axes)
    out = Tensor(np.transpose(x.data, axes), (x,))
    out._backward = lambda: x._accum(np.transpose(out.grad, inv))
    return out


def sum_all(x):
    out = Tensor(np.sum(x.data), (x,))
    out._backward = lambda: x._accum(np.broadcast_to(out.grad, x.shape))
    return out


def _softmax(z):
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax(x):
    y = _softmax(x.data)
    out = Tensor(y, (x,))

    def backward():
        g = out.grad
        x._accum(y * (g - np.sum(g * y, axis=-1, keepdims=True)))

    out._backward = backward
    return out


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, (x, gamma, beta))

    def backward():
        g = out.grad
        gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        beta._accum(_unbroadcast(g, beta.shape))
        dxhat = g * gamma.data
        x._accum(inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)))

    out._backward = backward
    return out


def masked_attention(q, k, v, key_mask):
    """Scaled dot-product attention restricted to keys where ``key_mask`` is true.

    ``q, k, v`` have shape ``(..., N, d)``; ``key_mask`` broadcasts against
    ``(..., N)``. Queries with no valid key produce zeros.
    """
    d = q.shape[-1]
    scale = 1.0 / np.sqrt(d)
    mask = np.asarray(key_mask, dtype=bool)[..., None, :]
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    s = np.where(mask, s, -np.inf)
    m = np.max(s, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(s - m), 0.0)
    den = e.sum(axis=-1, keepdims=True)
    a = e / np.where(den > 0, den, 1.0)
    out = Tensor(a @ v.data, (q, k, v))

    def backward():
        g = out.grad
        v._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, v.shape))
        da = g @ np.swapaxes(v.data, -1, -2)
        ds = a * (da - np.sum(da * a, axis=-1, keepdims=True)) * scale
        q._accum(_unbroadcast(ds @ k.data, q.shape))
        k._accum(_unbroadcast(np.swapaxes(ds, -1, -2) @ q.data, k.shape))

    out._backward = backward
    return out


def masked_mean_pool(x, mask, null):
    """Mean of the rows of ``x (B, N, D)`` where ``mask`` is true; ``null`` for empty sets."""
    mask = np.asarray(mask, dtype=float)
    cnt = mask.sum(axis=1)
    empty = (cnt == 0).astype(float)
    denom = np.maximum(cnt, 1.0)[:, None]
    pooled = (x.data * mask[..., None]).sum(axis=1) / denom + empty[:, None] * null.data
    out = Tensor(pooled, (x, null))

    def backward():
        g = out.grad
        x._accum(mask[..., None] * (g / denom)[:, None, :])
        null._accum((empty[:, None] * g).sum(axis=0))

    out._backward = backward
    return out


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=int)
    z = logits.data
    m = np.max(z, axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=-1))
    n = len(labels)
    loss = np.mean(lse - z[np.arange(n), labels])
    out = Tensor(loss, (logits,))

    def backward():
        p = _softmax(z)
        p[np.arange(n), labels] -= 1.0
        logits._accum(out.grad * p / n)

    out._backward = backward
    return out


def backward(loss: Tensor):
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node._parents if id(p) not in seen)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    return order


def release_graph(order):
    """Drop the backward closures so the graph is freed by reference counting, not the cycle collector."""
    for node in order:
        node._backward = None
        node._parents = ()


def grad(loss: Tensor, params):
    """Gradients of a scalar ``loss`` with respect to ``params`` (a dict or a sequence of tensors)."""
    items = params.items() if isinstance(params, dict) else enumerate(params)
    items = list(items)
    for _, p in items:
        p.grad = None
    order = backward(loss)
    out = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in items}
    release_graph(order)
    return out if isinstance(params, dict) else [out[i] for i in range(len(items))]
