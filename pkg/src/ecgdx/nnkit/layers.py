"""Forward/backward kernels on NHWC arrays (batch, height, width, channels).

Convolutions go through im2col so the heavy lifting is one BLAS matmul; the
gather/scatter and pooling loops are numba kernels. Every reduction runs in
a fixed order, so results are bit-reproducible on a given platform.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _im2col(x):
    n, h, w, c = x.shape
    cols = np.zeros((n, h, w, 9 * c), x.dtype)
    for i in range(n):
        for y in range(h):
            for xx in range(w):
                for dy in range(3):
                    yy = y + dy - 1
                    if yy < 0 or yy >= h:
                        continue
                    for dx in range(3):
                        x2 = xx + dx - 1
                        if x2 < 0 or x2 >= w:
                            continue
                        o = (dy * 3 + dx) * c
                        for k in range(c):
                            cols[i, y, xx, o + k] = x[i, yy, x2, k]
    return cols.reshape(n * h * w, 9 * c)


@numba.njit(cache=True)
def _col2im(dcols, n, h, w, c):
    d = dcols.reshape(n, h, w, 9 * c)
    out = np.zeros((n, h, w, c), dcols.dtype)
    for i in range(n):
        for y in range(h):
            for xx in range(w):
                for dy in range(3):
                    yy = y + dy - 1
                    if yy < 0 or yy >= h:
                        continue
                    for dx in range(3):
                        x2 = xx + dx - 1
                        if x2 < 0 or x2 >= w:
                            continue
                        o = (dy * 3 + dx) * c
                        for k in range(c):
                            out[i, yy, x2, k] += d[i, y, xx, o + k]
    return out


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded 3x3 convolution. ``w`` has shape (3, 3, C_in, C_out).
    Returns (output, cols) where cols is the im2col matrix kept for backward."""
    n, h, wd, c = x.shape
    cols = _im2col(np.ascontiguousarray(x))
    out = cols @ w.reshape(9 * c, -1) + b
    return out.reshape(n, h, wd, -1), cols


def conv3x3_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    n, h, wd, c = x_shape
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = d2 @ w.reshape(9 * c, -1).T
    return _col2im(np.ascontiguousarray(dcols), n, h, wd, c), dw, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


@numba.njit(cache=True)
def _pool_fwd(x):
    n, h, w, c = x.shape
    out = np.empty((n, h // 2, w // 2, c), x.dtype)
    idx = np.empty((n, h // 2, w // 2, c), np.uint8)
    for i in range(n):
        for y in range(h // 2):
            for xx in range(w // 2):
                for k in range(c):
                    best = x[i, 2 * y, 2 * xx, k]
                    bi = 0
                    for j in range(1, 4):
                        v = x[i, 2 * y + j // 2, 2 * xx + j % 2, k]
                        if v > best:
                            best = v
                            bi = j
                    out[i, y, xx, k] = best
                    idx[i, y, xx, k] = bi
    return out, idx


@numba.njit(cache=True)
def _pool_bwd(d, idx, h, w):
    n, h2, w2, c = d.shape
    out = np.zeros((n, h, w, c), d.dtype)
    for i in range(n):
        for y in range(h2):
            for xx in range(w2):
                for k in range(c):
                    j = idx[i, y, xx, k]
                    out[i, 2 * y + j // 2, 2 * xx + j % 2, k] = d[i, y, xx, k]
    return out


def maxpool2_forward(x):
    """2x2 max pooling; the gradient routes to the first maximal element
    in row-major window order."""
    return _pool_fwd(np.ascontiguousarray(x))


def maxpool2_backward(dout, idx, x_shape):
    return _pool_bwd(np.ascontiguousarray(dout), idx, x_shape[1], x_shape[2])


def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def gap_forward(x):
    return x.mean(axis=(1, 2))


def gap_backward(dout, x_shape):
    n, h, w, c = x_shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), x_shape).astype(dout.dtype)


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
