"""Minimal reverse-mode automatic differentiation over float64 arrays.

Only the operations the motion denoiser needs are implemented. Forward
results are materialized eagerly; calling ``backward()`` on a scalar
output accumulates gradients into every reachable Tensor created with
``requires_grad=True``. The fused kernels dispatch through
``avamo._kernels`` so the compiled backend accelerates both passes.

Graphs are throwaway: build one per training step, call backward once,
drop it. Nothing here is thread-safe and nothing mutates input arrays.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() is only defined for scalar outputs")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _accum(t: Tensor, g: np.ndarray):
    # Accumulation never mutates in place, so aliasing g with another
    # node's grad is safe.
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _wire(out: Tensor, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _wire(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _wire(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward():
        g = out.grad
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _wire(out, (a, b), backward)


# -- linear algebra and shape -------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim != a.ndim:
        raise ValueError(
            f"matmul supports (2d,2d) or (3d,3d) with equal batch, "
            f"got {a.data.shape} @ {b.data.shape}"
        )
    if a.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise ValueError("batched matmul requires identical batch dims")
    out = Tensor(a.data @ b.data)

    def backward():
        g = out.grad
        if a.ndim == 2:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        else:
            _accum(a, g @ b.data.transpose(0, 2, 1))
            _accum(b, a.data.transpose(0, 2, 1) @ g)

    return _wire(out, (a, b), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward():
        _accum(a, out.grad.transpose(inverse))

    return _wire(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    out = Tensor(a.data.reshape(shape))

    def backward():
        _accum(a, out.grad.reshape(orig))

    return _wire(out, (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))

    return _wire(out, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.data.shape[axis]
    else:
        count = int(np.prod([a.data.shape[i] for i in axis]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- fused kernel ops ----------------------------------------------------


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    shape = a.data.shape
    x2 = np.ascontiguousarray(a.data.reshape(-1, shape[-1]))
    y2 = K.softmax_fwd(x2)
    out = Tensor(y2.reshape(shape))

    def backward():
        g2 = np.ascontiguousarray(out.grad.reshape(-1, shape[-1]))
        _accum(a, K.softmax_bwd(y2, g2).reshape(shape))

    return _wire(out, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Row-wise layer norm over the last axis with affine parameters."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    shape = x.data.shape
    x2 = np.ascontiguousarray(x.data.reshape(-1, shape[-1]))
    y2, xhat, rstd = K.layernorm_fwd(
        x2, np.ascontiguousarray(gain.data), np.ascontiguousarray(bias.data), eps
    )
    out = Tensor(y2.reshape(shape))

    def backward():
        g2 = np.ascontiguousarray(out.grad.reshape(-1, shape[-1]))
        dx, dg, db = K.layernorm_bwd(xhat, rstd, np.ascontiguousarray(gain.data), g2)
        _accum(x, dx.reshape(shape))
        _accum(gain, dg)
        _accum(bias, db)

    return _wire(out, (x, gain, bias), backward)


def gelu(a) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    flat = np.ascontiguousarray(a.data.reshape(-1))
    out = Tensor(K.gelu_fwd(flat).reshape(shape))

    def backward():
        g = np.ascontiguousarray(out.grad.reshape(-1))
        _accum(a, K.gelu_bwd(flat, g).reshape(shape))

    return _wire(out, (a,), backward)


def depthwise_conv_time(x, w, b) -> Tensor:
    """Per-channel convolution along axis 0 of a [frames, channels] array."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = Tensor(K.dwconv_fwd(xd, wd, np.ascontiguousarray(b.data)))

    def backward():
        g = np.ascontiguousarray(out.grad)
        dx, dw, db = K.dwconv_bwd(xd, wd, g)
        _accum(x, dx)
        _accum(w, dw)
        _accum(b, db)

    return _wire(out, (x, w, b), backward)


def conv_hidden(x, w, b) -> Tensor:
    """Single shared 1-D kernel sliding along axis 1 of a 2-D array.

    This is the gating convolution: with w == 0 and b == 0 the output is
    exactly zero, so a gated residual branch contributes nothing.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if b.data.ndim != 0:
        raise ValueError("conv_hidden bias must be a scalar")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = Tensor(K.gateconv_fwd(xd, wd, float(b.data)))

    def backward():
        g = np.ascontiguousarray(out.grad)
        dx, dw, db = K.gateconv_bwd(xd, wd, g)
        _accum(x, dx)
        _accum(w, dw)
        _accum(b, np.asarray(db, dtype=np.float64))

    return _wire(out, (x, w, b), backward)


# -- loss primitives ------------------------------------------------------


def bce_with_logits_mean(logits, targets) -> Tensor:
    """Mean binary cross entropy from logits; targets in {0, 1}."""
    logits = as_tensor(logits)
    if isinstance(targets, Tensor):
        targets = targets.data
    t = np.asarray(targets, dtype=np.float64)
    z = logits.data
    if z.shape != t.shape:
        raise ValueError(f"logits shape {z.shape} != targets shape {t.shape}")
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(per.mean())
    sig = 1.0 / (1.0 + np.exp(-z))

    def backward():
        _accum(logits, out.grad * (sig - t) / z.size)

    return _wire(out, (logits,), backward)


def cross_entropy_logits(logits, true_index: int) -> Tensor:
    """Negative log softmax probability of one class; logits is 1-D."""
    logits = as_tensor(logits)
    z = logits.data
    if z.ndim != 1:
        raise ValueError("cross_entropy_logits expects a 1-D logit vector")
    if not 0 <= true_index < z.shape[0]:
        raise ValueError(f"class index {true_index} out of range for {z.shape[0]}")
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    out = Tensor(lse - z[true_index])
    probs = np.exp(z - lse)

    def backward():
        g = probs.copy()
        g[true_index] -= 1.0
        _accum(logits, out.grad * g)

    return _wire(out, (logits,), backward)
