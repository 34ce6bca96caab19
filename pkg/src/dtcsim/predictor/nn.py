"""Minimal 1-D convolution primitives with hand-written backward passes.

Arrays follow the (batch, channels, length) layout.  Only odd kernels with
"same" output length are supported.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, p, mode):
    if p == 0:
        return x
    width = ((0, 0), (0, 0), (p, p))
    if mode == "edge":
        return np.pad(x, width, mode="edge")
    return np.pad(x, width)


def conv1d_forward(x, w, b, mode="zeros"):
    """Same-length 1-D convolution (cross-correlation).

    x: (n, c_in, L); w: (c_out, c_in, k); b: (c_out,).  Returns the output and
    a cache for :func:`conv1d_backward`.
    """
    c_out, c_in, k = w.shape
    p = k // 2
    xp = _pad(x, p, mode)
    win = sliding_window_view(xp, k, axis=2)  # (n, c_in, L, k)
    n, _, length, _ = win.shape
    cols = win.transpose(0, 2, 1, 3).reshape(n, length, c_in * k)
    out = cols @ w.reshape(c_out, c_in * k).T  # (n, L, c_out)
    out = out.transpose(0, 2, 1) + b[None, :, None]
    return out, (cols, x.shape, w, mode)


def conv1d_backward(dout, cache):
    """Gradients (dx, dw, db) of the convolution given upstream ``dout``."""
    cols, xshape, w, mode = cache
    c_out, c_in, k = w.shape
    p = k // 2
    n, _, length = xshape
    d = dout.transpose(0, 2, 1)  # (n, L, c_out)
    dw = np.tensordot(d, cols, axes=([0, 1], [0, 1])).reshape(c_out, c_in, k)
    db = dout.sum(axis=(0, 2))
    dcols = (d @ w.reshape(c_out, c_in * k)).reshape(n, length, c_in, k)
    dxp = np.zeros((n, c_in, length + 2 * p))
    for j in range(k):
        dxp[:, :, j:j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
    dx = dxp[:, :, p:p + length].copy()
    if mode == "edge" and p:
        dx[:, :, 0] += dxp[:, :, :p].sum(axis=2)
        dx[:, :, -1] += dxp[:, :, p + length:].sum(axis=2)
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def he_normal(rng, shape, fan_in, scale=1.0):
    return rng.standard_normal(shape) * (scale * np.sqrt(2.0 / fan_in))


def sgd_step(params, grads, lr):
    for name, g in grads.items():
        params[name] -= lr * g
