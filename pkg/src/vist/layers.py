"""Parameter containers and transformer building blocks over tensorcore."""
from __future__ import annotations

import math

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor

NEG_INF = -np.inf


class Module:
    """Attribute-walking parameter registry (Tensors, Modules, lists of Modules)."""

    def named_parameters(self, prefix=""):
        for name in sorted(vars(self)):
            val = getattr(self, name)
            full = f"{prefix}{name}"
            if isinstance(val, Tensor):
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, v in enumerate(val):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
            if not flag:
                p.grad = None


def _param(arr, dtype):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, bias=True, std=None):
        std = (1.0 / math.sqrt(d_in)) if std is None else std
        self.weight = _param(rng.normal(0.0, std, size=(d_in, d_out)), dtype)
        self.bias = _param(np.zeros(d_out), dtype) if bias else None

    def __call__(self, x):
        y = tc.matmul(x, self.weight)
        return tc.add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, dtype=np.float32):
        self.weight = _param(np.ones(d), dtype)
        self.bias = _param(np.zeros(d), dtype)

    def __call__(self, x):
        return tc.layer_norm(x, self.weight, self.bias)


class MLP(Module):
    def __init__(self, d, hidden, rng, dtype=np.float32):
        self.fc1 = Linear(d, hidden, rng, dtype)
        self.fc2 = Linear(hidden, d, rng, dtype, std=1.0 / math.sqrt(hidden) / 2)

    def __call__(self, x):
        return self.fc2(tc.gelu(self.fc1(x)))


def split_heads(x, heads):
    """(B, T, D) -> (B, h, T, D/h)."""
    B, T, D = x.shape
    return tc.transpose(tc.reshape(x, (B, T, heads, D // heads)), (0, 2, 1, 3))


def merge_heads(x):
    B, h, T, d = x.shape
    return tc.reshape(tc.transpose(x, (0, 2, 1, 3)), (B, T, h * d))


class Attention(Module):
    """Multi-head attention; queries from ``x``, keys/values from ``ctx``."""

    def __init__(self, d, heads, rng, dtype=np.float32, d_ctx=None):
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        d_ctx = d if d_ctx is None else d_ctx
        self.heads = heads
        self.q = Linear(d, d, rng, dtype)
        self.k = Linear(d_ctx, d, rng, dtype)
        self.v = Linear(d_ctx, d, rng, dtype)
        self.o = Linear(d, d, rng, dtype, std=1.0 / math.sqrt(d) / 2)

    def __call__(self, x, ctx=None, mask=None, keep_probs=False):
        ctx = x if ctx is None else ctx
        h = self.heads
        q = split_heads(self.q(x), h)
        k = split_heads(self.k(ctx), h)
        v = split_heads(self.v(ctx), h)
        d = q.shape[-1]
        scores = tc.scale(tc.matmul(q, tc.transpose(k)), 1.0 / math.sqrt(d))
        probs = tc.softmax(scores, mask=mask)
        out = self.o(merge_heads(tc.matmul(probs, v)))
        if keep_probs:
            self.last_probs = probs.data
        return out


def causal_mask(T, dtype=np.float32):
    m = np.zeros((T, T), dtype=dtype)
    m[np.triu_indices(T, 1)] = NEG_INF
    return m


def key_mask(valid, dtype=np.float32):
    """(B, S) validity -> additive (B, 1, 1, S) mask."""
    valid = np.asarray(valid, dtype=bool)
    m = np.where(valid, 0.0, NEG_INF).astype(dtype)
    return m[:, None, None, :]


class Block(Module):
    """Pre-norm transformer block (self-attention + MLP)."""

    def __init__(self, d, heads, rng, dtype=np.float32, mlp_ratio=4):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = Attention(d, heads, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.mlp = MLP(d, mlp_ratio * d, rng, dtype)

    def __call__(self, x, mask=None):
        x = tc.add(x, self.attn(self.ln1(x), mask=mask))
        return tc.add(x, self.mlp(self.ln2(x)))
