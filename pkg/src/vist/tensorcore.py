"""Small dense reverse-mode autodiff on top of numpy arrays.

Only the operations the models need are provided. Every op records a
closure that accumulates gradients into its inputs; ``Tensor.backward``
walks the graph in reverse topological order.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

LN_EPS = 1e-5
LOG_CLAMP = 1e-12
_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), op=""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent._accum(pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    @property
    def T(self):
        return transpose(self)


def _wrap(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op):
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, _parents=parents if track else (), op=op)
    if track:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def parameter(data, dtype=np.float64):
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


# ---------------------------------------------------------------- primitives


def add(a, b):
    a, b = _wrap(a), _wrap(b, a.dtype)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(out, (a, b), bw, "add")


def mul(a, b):
    a, b = _wrap(a), _wrap(b, a.dtype)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e

    def bw(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        )

    return _make(out, (a, b), bw, "mul")


def scale(a, c):
    a = _wrap(a)
    c = float(c)

    def bw(g):
        return ((a, g * c),)

    return _make(a.data * a.data.dtype.type(c), (a,), bw, "scale")


def matmul(a, b):
    """Batched matmul with numpy semantics on the leading dims (both >= 2-D)."""
    a, b = _wrap(a), _wrap(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold leading dims: one GEMM instead of a batched loop
        K = a.shape[-1]
        a2 = a.data.reshape(-1, K)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],))

        def bw2(g):
            g2 = g.reshape(-1, b.shape[1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ((a, ga), (b, gb))

        return _make(out, (a, b), bw2, "matmul")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ((a, ga), (b, gb))

    return _make(out, (a, b), bw, "matmul")


def transpose(a, axes=None):
    """Permute axes; default swaps the last two."""
    a = _wrap(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return ((a, np.transpose(g, inv)),)

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def reshape(a, shape):
    a = _wrap(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from e

    def bw(g):
        return ((a, g.reshape(a.shape)),)

    return _make(out, (a,), bw, "reshape")


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError("concat: incompatible shapes " + str([t.shape for t in tensors])) from e
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(zip(tensors, np.split(g, sizes, axis=axis)))

    return _make(out, tuple(tensors), bw, "concat")


def slice_(a, idx):
    a = _wrap(a)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _make(np.array(out), (a,), bw, "slice")


def softmax(x, mask=None, axis=-1):
    """Softmax with an optional additive mask (0 keeps, -inf drops).

    Masked entries come out as exact zeros. A row with every entry masked
    is an error.
    """
    x = _wrap(x)
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=z.dtype)
        z = z + mask
    zmax = z.max(axis=axis, keepdims=True)
    if mask is not None and np.isneginf(zmax).any():
        raise ValueError("softmax: fully masked row")
    z = z - zmax
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return ((x, p * (g - (g * p).sum(axis=axis, keepdims=True))),)

    return _make(p, (x,), bw, "softmax")


def layer_norm(x, weight=None, bias=None, eps=LN_EPS):
    """Normalize over the last axis, then apply the optional affine terms."""
    x = _wrap(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    n = x.shape[-1]

    def bw(g):
        gx = (rstd / n) * (n * g - g.sum(-1, keepdims=True) - xhat * (g * xhat).sum(-1, keepdims=True))
        return ((x, gx),)

    out = _make(xhat, (x,), bw, "layer_norm")
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """tanh approximation of GELU."""
    x = _wrap(x)
    d = x.data
    u = _GELU_C * (d + 0.044715 * (d * d * d))
    t = np.tanh(u)
    out = 0.5 * d * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * d * d)
        return ((x, g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * du)),)

    return _make(out, (x,), bw, "gelu")


def embedding(table, ids):
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("embedding: id out of range")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return ((table, full),)

    return _make(table.data[ids], (table,), bw, "embedding")


def mean_pool(x, mask=None, axis=-2):
    """Mean over ``axis``; ``mask`` (True = keep) excludes positions."""
    x = _wrap(x)
    ax = axis % x.ndim
    if mask is None:
        w = np.ones(x.shape[ax], dtype=x.dtype)
        shape = [1] * x.ndim
        shape[ax] = x.shape[ax]
        w = w.reshape(shape)
        w = np.broadcast_to(w, x.shape[: ax + 1] + (1,) * (x.ndim - ax - 1))
    else:
        m = np.asarray(mask, dtype=bool)
        w = m.astype(x.dtype).reshape(m.shape + (1,) * (x.ndim - m.ndim))
    cnt = w.sum(axis=ax, keepdims=True)
    if np.any(cnt == 0):
        raise ValueError("mean_pool: nothing to pool (all positions masked)")
    out = (x.data * w).sum(axis=ax) / np.squeeze(cnt, axis=ax)

    def bw(g):
        return ((x, np.expand_dims(g, ax) * w / cnt),)

    return _make(out, (x,), bw, "mean_pool")


def sum_(x, axis=None):
    x = _wrap(x)
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.shape).copy()),)
        return ((x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()),)

    return _make(out, (x,), bw, "sum")


def l2_normalize(x, eps=1e-12):
    x = _wrap(x)
    n = np.sqrt((x.data * x.data).sum(-1, keepdims=True))
    n = np.maximum(n, eps)
    y = x.data / n

    def bw(g):
        return ((x, (g - y * (g * y).sum(-1, keepdims=True)) / n),)

    return _make(y, (x,), bw, "l2_normalize")


def cross_entropy(logits, targets, weights=None):
    """Mean token cross-entropy over rows of ``logits`` (..., V).

    ``weights`` (same shape as targets) selects and weights positions; the
    result is sum(w * nll) / sum(w).
    """
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    z = logits.data.reshape(-1, V)
    t = t.reshape(-1)
    if z.shape[0] != t.shape[0]:
        raise ShapeError(f"cross_entropy: {logits.shape} vs targets {np.shape(targets)}")
    if weights is None:
        w = np.ones(t.shape[0], dtype=z.dtype)
    else:
        w = np.asarray(weights, dtype=z.dtype).reshape(-1)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: empty loss mask")
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    logp = z - lse
    rows = np.arange(z.shape[0])
    nll = -logp[rows, t]
    out = (w * nll).sum() / total

    def bw(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        return ((logits, (g * p * (w / total)[:, None]).reshape(logits.shape)),)

    return _make(np.asarray(out, dtype=z.dtype), (logits,), bw, "cross_entropy")


def log(x):
    x = _wrap(x)
    c = np.maximum(x.data, LOG_CLAMP)

    def bw(g):
        return ((x, np.where(x.data > LOG_CLAMP, g / c, 0.0)),)

    return _make(np.log(c), (x,), bw, "log")


def exp(x):
    x = _wrap(x)
    out = np.exp(x.data)

    def bw(g):
        return ((x, g * out),)

    return _make(out, (x,), bw, "exp")


# ---------------------------------------------------------- gradient checking


def gradient_check(f, inputs, eps=1e-6, order=2, floor=1e-8, max_per_tensor=None, seed=0):
    """Max relative error between reverse-mode and finite-difference grads.

    ``f`` maps the list of input Tensors to a scalar Tensor. Inputs are
    perturbed in place and restored afterwards. ``order`` 2 is the central
    difference, 4 the five-point stencil. Denominators are clamped below at
    ``floor`` so entries whose true gradient is (structurally) zero are held
    to an absolute bound instead. ``max_per_tensor`` checks a seeded random
    subset of entries in large tensors.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f(inputs)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("gradient_check: non-finite output")
    out.backward()
    rng = np.random.default_rng(seed)

    def at(flat, i, x):
        flat[i] = x
        v = float(f(inputs).data)
        if not math.isfinite(v):
            raise FloatingPointError("gradient_check: non-finite value")
        return v

    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        ga = analytic.reshape(-1)
        idx = range(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        with no_grad():
            for i in idx:
                old = flat[i]
                if order == 2:
                    num = (at(flat, i, old + eps) - at(flat, i, old - eps)) / (2 * eps)
                else:
                    num = (-at(flat, i, old + 2 * eps) + 8 * at(flat, i, old + eps)
                           - 8 * at(flat, i, old - eps) + at(flat, i, old - 2 * eps)) / (12 * eps)
                flat[i] = old
                a = float(ga[i])
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst
