"""Minimal CNN building blocks on numpy arrays (NCHW layout).

Each op returns (output, cache); the matching backward consumes the
upstream gradient plus the cache. Convolutions go through an im2col view
so the heavy lifting is a single matmul each way.
"""

import numpy as np

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "maxpool_forward",
    "maxpool_backward",
    "relu_forward",
    "relu_backward",
    "dense_forward",
    "dense_backward",
    "dropout_forward",
    "dropout_backward",
    "softmax_cross_entropy",
    "softmax_probs",
    "he_init",
    "Adam",
]


def _windows(padded, kh, kw, stride):
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, kh, kw)


def conv2d_forward(x, w, b, stride=1, pad=0):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, kh, kw, stride)
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    out = cols @ w.reshape(O, -1).T + b
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    cache = (cols, x.shape, w, stride, pad, (Ho, Wo))
    return np.ascontiguousarray(out), cache


def conv2d_backward(dout, cache):
    cols, x_shape, w, stride, pad, (Ho, Wo) = cache
    B, C, H, W = x_shape
    O, _, kh, kw = w.shape
    dout_cols = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dw = (dout_cols.T @ cols).reshape(w.shape)
    db = dout_cols.sum(axis=0)
    dcols = (dout_cols @ w.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    dx = dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp
    return dx, dw, db


def maxpool_forward(x, size=3, stride=2, pad=1):
    B, C, H, W = x.shape
    fill = np.finfo(x.dtype).min
    xp = np.pad(
        x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill
    ) if pad else x
    win = _windows(xp, size, size, stride)
    Ho, Wo = win.shape[2], win.shape[3]
    flat = win.reshape(B, C, Ho, Wo, size * size)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    cache = (idx, x.shape, size, stride, pad, (Ho, Wo))
    return out, cache


def maxpool_backward(dout, cache):
    idx, x_shape, size, stride, pad, (Ho, Wo) = cache
    B, C, H, W = x_shape
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=dout.dtype)
    bi, ci, hi, wi = np.indices((B, C, Ho, Wo), sparse=False)
    rows = hi * stride + idx // size
    cols = wi * stride + idx % size
    np.add.at(dxp, (bi, ci, rows, cols), dout)
    return dxp[:, :, pad : pad + H, pad : pad + W] if pad else dxp


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x, rate, rng, train):
    """Inverted dropout: zero a `rate` fraction, rescale survivors."""
    if not train or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax_probs(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(scores, labels):
    """Mean cross entropy over the batch plus the gradient wrt scores."""
    probs = softmax_probs(scores)
    n = scores.shape[0]
    eps = np.finfo(scores.dtype).tiny
    loss = float(-np.log(probs[np.arange(n), labels] + eps).mean())
    dscores = probs.copy()
    dscores[np.arange(n), labels] -= 1.0
    return loss, dscores / n


def he_init(rng, shape, fan_in, dtype=np.float32):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class Adam:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[key] -= self.lr * correction * m / (np.sqrt(v) + self.eps)
