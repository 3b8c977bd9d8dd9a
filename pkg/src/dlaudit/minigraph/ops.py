"""Forward and backward kernels for the graph op set.

All kernels are batched (leading N axis), pure numpy, and dtype-preserving:
float32 graphs run in float32, float64 inputs run in float64 (used by the
finite-difference checks). Every forward returns (output, ctx) and the
matching backward consumes (grad_out, ctx).
"""
from __future__ import annotations

import numpy as np

from .graph import ShapeError


# -- conv2d ------------------------------------------------------------------

def _conv_pads(h, w, kh, kw, stride, padding):
    if padding == "valid":
        return (0, 0, 0, 0)
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    ph = max(0, (out_h - 1) * stride + kh - h)
    pw = max(0, (out_w - 1) * stride + kw - w)
    return (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)


def _im2col(x, kh, kw, stride, padding):
    n, h, w, c = x.shape
    top, bot, left, right = _conv_pads(h, w, kh, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (top, bot), (left, right), (0, 0)))
    out_h = (xp.shape[1] - kh) // stride + 1
    out_w = (xp.shape[2] - kw) // stride + 1
    cols = np.empty((n, out_h, out_w, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + out_h * stride:stride,
                                        j:j + out_w * stride:stride, :]
    return cols, xp.shape, (top, left)


def conv2d_forward(x, w, b, stride=1, padding="valid"):
    kh, kw, cin, cout = w.shape
    cols, xp_shape, offs = _im2col(x, kh, kw, stride, padding)
    n, out_h, out_w = cols.shape[:3]
    flat = cols.reshape(n * out_h * out_w, kh * kw * cin)
    out = flat @ w.reshape(kh * kw * cin, cout) + b
    out = out.reshape(n, out_h, out_w, cout)
    ctx = (cols, x.shape, xp_shape, offs, w, stride)
    return out, ctx


def conv2d_backward(grad, ctx):
    cols, x_shape, xp_shape, (top, left), w, stride = ctx
    kh, kw, cin, cout = w.shape
    n, out_h, out_w = grad.shape[:3]
    gflat = grad.reshape(n * out_h * out_w, cout)
    dw = (cols.reshape(n * out_h * out_w, kh * kw * cin).T @ gflat).reshape(w.shape)
    db = gflat.sum(axis=0)
    dcols = (gflat @ w.reshape(kh * kw * cin, cout).T).reshape(n, out_h, out_w, kh, kw, cin)
    dxp = np.zeros(xp_shape, dtype=grad.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + out_h * stride:stride, j:j + out_w * stride:stride, :] += dcols[:, :, :, i, j, :]
    h, wd = x_shape[1], x_shape[2]
    dx = dxp[:, top:top + h, left:left + wd, :]
    return dx, {"weight": dw, "bias": db}


# -- dense -------------------------------------------------------------------

def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(grad, ctx):
    x, w = ctx
    return grad @ w.T, {"weight": x.T @ grad, "bias": grad.sum(axis=0)}


# -- elementwise / structural -------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), (x > 0)


def relu_backward(grad, mask):
    return grad * mask, {}


def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(grad, shape):
    return grad.reshape(shape), {}


def add_forward(a, b):
    return a + b, None


def normalize_forward(x, mean, std):
    mean = np.asarray(mean, dtype=x.dtype)
    std = np.asarray(std, dtype=x.dtype)
    return (x - mean) / std, std


def normalize_backward(grad, std):
    return grad / std, {}


def softmax_forward(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return s, s


def softmax_backward(grad, s):
    dot = (grad * s).sum(axis=-1, keepdims=True)
    return s * (grad - dot), {}


# -- pooling -----------------------------------------------------------------

def maxpool2d_forward(x, ksize=2, stride=None):
    stride = ksize if stride is None else stride
    n, h, w, c = x.shape
    out_h = (h - ksize) // stride + 1
    out_w = (w - ksize) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"maxpool window {ksize} does not fit input {x.shape}")
    out = np.empty((n, out_h, out_w, c), dtype=x.dtype)
    argmax = np.empty((n, out_h, out_w, c), dtype=np.int64)
    for i in range(out_h):
        for j in range(out_w):
            win = x[:, i * stride:i * stride + ksize, j * stride:j * stride + ksize, :]
            flat = win.reshape(n, ksize * ksize, c)
            idx = flat.argmax(axis=1)
            out[:, i, j, :] = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
            argmax[:, i, j, :] = idx
    return out, (x.shape, ksize, stride, argmax)


def maxpool2d_backward(grad, ctx):
    x_shape, ksize, stride, argmax = ctx
    n, h, w, c = x_shape
    out_h, out_w = grad.shape[1], grad.shape[2]
    dx = np.zeros(x_shape, dtype=grad.dtype)
    for i in range(out_h):
        for j in range(out_w):
            idx = argmax[:, i, j, :]
            di, dj = idx // ksize, idx % ksize
            nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
            np.add.at(dx, (nn, i * stride + di, j * stride + dj, cc), grad[:, i, j, :])
    return dx, {}


def avgpool2d_forward(x, ksize=2, stride=None):
    stride = ksize if stride is None else stride
    n, h, w, c = x.shape
    out_h = (h - ksize) // stride + 1
    out_w = (w - ksize) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"avgpool window {ksize} does not fit input {x.shape}")
    out = np.empty((n, out_h, out_w, c), dtype=x.dtype)
    for i in range(out_h):
        for j in range(out_w):
            win = x[:, i * stride:i * stride + ksize, j * stride:j * stride + ksize, :]
            out[:, i, j, :] = win.mean(axis=(1, 2))
    return out, (x.shape, ksize, stride)


def avgpool2d_backward(grad, ctx):
    x_shape, ksize, stride = ctx
    dx = np.zeros(x_shape, dtype=grad.dtype)
    share = 1.0 / (ksize * ksize)
    out_h, out_w = grad.shape[1], grad.shape[2]
    for i in range(out_h):
        for j in range(out_w):
            dx[:, i * stride:i * stride + ksize, j * stride:j * stride + ksize, :] += \
                grad[:, i:i + 1, j:j + 1, :] * share
    return dx, {}
