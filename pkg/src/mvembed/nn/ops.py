"""Differentiable layer set: 5x5 convolutions, 2x2 pooling, dense, losses.

Convolutions use im2col plus BLAS matmul; the column buffers come from the
shared pool so repeated training iterations reuse the same memory.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .engine import POOL, Tensor

K = 5  # all convolutions in this toolkit use 5x5 kernels
P = K // 2  # "same" zero padding


class ShapeError(ValueError):
    pass


@njit(cache=True)
def _im2col_fill(x, out):
    """Fill out (N,C,K,K,H,W) with shifted copies of x, zero outside the image."""
    n, c, h, w = x.shape
    for ni in range(n):
        for ci in range(c):
            for dy in range(K):
                sy = dy - P
                y0 = max(0, -sy)
                y1 = min(h, h - sy)
                for dx in range(K):
                    sx = dx - P
                    x0 = max(0, -sx)
                    x1 = min(w, w - sx)
                    dst = out[ni, ci, dy, dx]
                    dst[:y0, :] = 0.0
                    dst[y1:, :] = 0.0
                    for y in range(y0, y1):
                        row = dst[y]
                        row[:x0] = 0.0
                        row[x1:] = 0.0
                        row[x0:x1] = x[ni, ci, y + sy, x0 + sx : x1 + sx]


def _im2col(x: np.ndarray, out_cols: np.ndarray) -> np.ndarray:
    """Fill out_cols (N,C,K,K,H,W) with shifted copies of x; returns (N, CKK, HW)."""
    n, c, h, w = x.shape
    _im2col_fill(x, out_cols)
    return out_cols.reshape(n, c * K * K, h * w)


def _conv_data(x: np.ndarray, v: np.ndarray):
    """Cross-correlation, stride 1, same padding. Returns output and cols buffer."""
    n, c, h, w = x.shape
    co = v.shape[0]
    cols_buf = POOL.acquire((n, c, K, K, h, w), x.dtype)
    cols = _im2col(x, cols_buf)
    out = np.matmul(v.reshape(co, -1), cols).reshape(n, co, h, w)
    return out, cols_buf


def _conv_grad_input(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Adjoint of _conv_data w.r.t. its input: full correlation with flipped v."""
    n, co, h, w = g.shape
    c = v.shape[1]
    gcols_buf = POOL.acquire((n, co, K, K, h, w), g.dtype)
    gcols = _im2col(g, gcols_buf)
    vflip = np.ascontiguousarray(v[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(c, -1)
    gx = np.matmul(vflip, gcols).reshape(n, c, h, w)
    POOL.release(gcols_buf)
    return gx


def _conv_op(x: Tensor, w: Tensor, b: Tensor, weight_map) -> Tensor:
    """Shared conv/deconv node; weight_map turns w.data into (Co,Ci,K,K) layout."""
    v = weight_map(w.data)
    n, c, h, w_ = x.shape
    if v.shape[1] != c:
        raise ShapeError(f"input has {c} channels, weights expect {v.shape[1]}")
    if b.shape != (v.shape[0],):
        raise ShapeError(f"bias shape {b.shape} != ({v.shape[0]},)")
    out_data, cols_buf = _conv_data(x.data, v)
    out_data += b.data[None, :, None, None]
    out = Tensor(out_data, parents=(x, w, b))
    if not out.requires_grad:
        POOL.release(cols_buf)
        return out

    def backward(g):
        co = v.shape[0]
        g3 = g.reshape(n, co, h * w_)
        if w.requires_grad:
            cols = cols_buf.reshape(n, c * K * K, h * w_)
            gv = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(v.shape)
            w.accumulate(weight_map(gv))
        if b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate(_conv_grad_input(g, v))
        POOL.release(cols_buf)

    out._backward = backward
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x: (N,Cin,H,W), w: (Cout,Cin,5,5), b: (Cout,) -> (N,Cout,H,W)."""
    return _conv_op(x, w, b, lambda a: a)


def _transpose_flip(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def deconv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Transpose of conv2d's linear map at stride 1, same padding.

    x: (N,Cin,H,W), w: (Cin,Cout,5,5), b: (Cout,) -> (N,Cout,H,W). With a
    shared weight array this is the exact adjoint of conv2d, so
    <conv2d(x,W,0), y> == <x, deconv2d(y,W,0)>.
    """
    return _conv_op(x, w, b, _transpose_flip)


def maxpool2(x: Tensor) -> tuple[Tensor, np.ndarray]:
    """2x2 max pooling, stride 2. Ties go to the first element in row-major
    window order. Also returns the argmax indices (0..3 per window)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = (
        x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], parents=(x,))

    def backward(g):
        if not x.requires_grad:
            return
        gwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = (
            gwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        x.accumulate(gx)

    out._backward = backward
    return out, idx


def unpool2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling: each value fills its 2x2 block."""
    n, c, h, w = x.shape
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3), parents=(x,))

    def backward(g):
        if x.requires_grad:
            x.accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), parents=(x,))

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * (out.data > 0))

    out._backward = backward
    return out


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x: (N,Din), w: (Din,Dout), b: (Dout,) -> (N,Dout)."""
    if x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"fc shapes mismatch: x{x.shape} w{w.shape} b{b.shape}")
    out = Tensor(x.data @ w.data + b.data, parents=(x, w, b))

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"labels must be {n} class indices < {c}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = np.log(ez.sum(axis=1)) - z[np.arange(n), labels]
    out = Tensor(np.asarray(nll.mean(), dtype=logits.dtype), parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            gl = probs.copy()
            gl[np.arange(n), labels] -= 1
            logits.accumulate(gl * (g / n))

    out._backward = backward
    return out


def l2_reconstruction_loss(output: Tensor, target: np.ndarray) -> Tensor:
    """Mean over the batch of ||output - target||^2 / per-sample element count."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if output.shape != target.shape:
        raise ShapeError(f"shape mismatch: {output.shape} vs {target.shape}")
    diff = output.data - target
    out = Tensor(np.asarray(np.mean(diff * diff), dtype=output.dtype), parents=(output,))

    def backward(g):
        if output.requires_grad:
            output.accumulate(diff * (2.0 * g / diff.size))

    out._backward = backward
    return out


def softmax_accuracy(logits: Tensor, labels: np.ndarray) -> float:
    return float((logits.data.argmax(axis=1) == np.asarray(labels)).mean())
