"""Pure NumPy implementations of the fused kernels.

This module is the reference backend: the compiled Cython module must
match it to float64 round-off. All functions take and return C-ordered
float64 arrays and never modify their inputs.

Shape conventions:
  softmax / layernorm work on 2-D arrays, one row per normalized group;
  gelu works on flat 1-D arrays;
  dwconv_* convolve along axis 0 (time), one independent filter per
  column, zero padding, odd kernel, "same" output length;
  gateconv_* convolve a single shared kernel along axis 1 (the hidden
  axis), zero padding, odd kernel.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def softmax_fwd(x):
    m = x.max(axis=1, keepdims=True)
    y = np.exp(x - m)
    y /= y.sum(axis=1, keepdims=True)
    return y


def softmax_bwd(y, dy):
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def layernorm_fwd(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layernorm_bwd(xhat, rstd, gain, dy):
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx, dgain, dbias


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, dy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def dwconv_fwd(x, w, b):
    l, d = x.shape
    k = w.shape[0]
    off = k // 2
    y = np.tile(b, (l, 1))
    for j in range(k):
        lo = max(0, off - j)
        hi = min(l, l + off - j)
        if lo < hi:
            y[lo:hi] += w[j] * x[lo - off + j : hi - off + j]
    return y


def dwconv_bwd(x, w, dy):
    l, d = x.shape
    k = w.shape[0]
    off = k // 2
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for j in range(k):
        lo = max(0, off - j)
        hi = min(l, l + off - j)
        if lo < hi:
            dx[lo - off + j : hi - off + j] += w[j] * dy[lo:hi]
            dw[j] = (dy[lo:hi] * x[lo - off + j : hi - off + j]).sum(axis=0)
    db = dy.sum(axis=0)
    return dx, dw, db


def gateconv_fwd(x, w, b):
    l, d = x.shape
    k = w.shape[0]
    off = k // 2
    y = np.full((l, d), b, dtype=np.float64)
    for j in range(k):
        lo = max(0, off - j)
        hi = min(d, d + off - j)
        if lo < hi:
            y[:, lo:hi] += w[j] * x[:, lo - off + j : hi - off + j]
    return y


def gateconv_bwd(x, w, dy):
    l, d = x.shape
    k = w.shape[0]
    off = k // 2
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for j in range(k):
        lo = max(0, off - j)
        hi = min(d, d + off - j)
        if lo < hi:
            dx[:, lo - off + j : hi - off + j] += w[j] * dy[:, lo:hi]
            dw[j] = (dy[:, lo:hi] * x[:, lo - off + j : hi - off + j]).sum()
    db = dy.sum()
    return dx, dw, db
