"""Differentiable primitives.

Array layouts are channels-last: convolutions take ``(B, *spatial, C_in)``
inputs, ``conv`` kernels are ``(C_out, *k, C_in)`` and ``conv_transpose``
kernels are ``(C_in, *k, C_out)``.
"""

from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import Tensor, as_tensor, record


# ----------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    return record(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),), "sum")


# ---------------------------------------------------------------- dense layers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias along the last axis."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ValueError(f"bias_add: bias {b.shape} does not match channels of {x.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return record(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=axes)), "bias_add")


# ---------------------------------------------------------------- shape ops


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    axis = axis % xs[0].data.ndim
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([x.data for x in xs], axis=axis), xs, backward, "concat")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.data.ndim
    n = x.shape[axis]
    src = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, src).copy(),)

    return record(x.data.mean(axis=axis), (x,), backward, "mean")


# ---------------------------------------------------------------- graph ops


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``x[index]`` of a 2-D tensor."""
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    pick = sp.csr_matrix((np.ones(len(index)), (np.arange(len(index)), index)), shape=(len(index), n))
    return record(x.data[index], (x,), lambda g: (pick.T @ g,), "gather_rows")


def segment_sum(
    x: Tensor,
    src: np.ndarray,
    dst: np.ndarray,
    num_segments: int,
    weight: Optional[np.ndarray] = None,
) -> Tensor:
    """``out[d] = sum over edges e with dst[e] == d of weight[e] * x[src[e]]``."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = np.ones(len(src)) if weight is None else np.asarray(weight, dtype=float)
    op = sp.csr_matrix((w, (dst, src)), shape=(num_segments, x.shape[0]))
    return record(op @ x.data, (x,), lambda g: (op.T @ g,), "segment_sum")


# ---------------------------------------------------------------- linear resampling


def _apply_along(a: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    out = np.tensordot(mat, a, axes=([1], [axis]))
    return np.moveaxis(out, 0, axis)


def apply_linear_along(x: Tensor, mats: dict[int, np.ndarray], op: str = "linear_along") -> Tensor:
    """Apply a fixed matrix ``mats[axis]`` (out_len x in_len) along each listed axis."""
    out = x.data
    for axis, m in mats.items():
        out = _apply_along(out, m, axis)

    def backward(g):
        for axis, m in mats.items():
            g = _apply_along(g, m.T, axis)
        return (g,)

    return record(out, (x,), backward, op)


def pool2_matrix(n: int) -> np.ndarray:
    """Stride-2 averaging of pairs; an odd trailing element is kept alone."""
    m = (n + 1) // 2
    mat = np.zeros((m, n))
    for i in range(m):
        cols = [c for c in (2 * i, 2 * i + 1) if c < n]
        mat[i, cols] = 1.0 / len(cols)
    return mat


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Nearest-neighbour resampling with half-pixel centres."""
    src = np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)
    mat = np.zeros((n_out, n_in))
    mat[np.arange(n_out), src] = 1.0
    return mat


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation with half-pixel centres and edge clamping."""
    mat = np.zeros((n_out, n_in))
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def downsample2(x: Tensor, axes: Sequence[int]) -> Tensor:
    nd = x.data.ndim
    return apply_linear_along(x, {a % nd: pool2_matrix(x.shape[a]) for a in axes}, "downsample2")


def upsample2(x: Tensor, axes: Sequence[int]) -> Tensor:
    nd = x.data.ndim
    return apply_linear_along(
        x, {a % nd: nearest_matrix(x.shape[a], 2 * x.shape[a]) for a in axes}, "upsample2"
    )


def resample2d_bilinear(x: Tensor, out_h: int, out_w: int, axes: tuple[int, int] = (0, 1)) -> Tensor:
    nd = x.data.ndim
    ah, aw = axes[0] % nd, axes[1] % nd
    mats = {ah: bilinear_matrix(x.shape[ah], out_h), aw: bilinear_matrix(x.shape[aw], out_w)}
    return apply_linear_along(x, mats, "resample2d_bilinear")


# ---------------------------------------------------------------- convolutions


def _tuple(v, nd: int) -> tuple[int, ...]:
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v),) * nd


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv_transpose_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def conv(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    """N-d cross-correlation (N = 2 or 3), channels-last, zero padding."""
    nd = x.data.ndim - 2
    if w.data.ndim != nd + 2 or w.shape[-1] != x.shape[-1]:
        raise ValueError(f"conv: kernel {w.shape} incompatible with input {x.shape}")
    stride, pad = _tuple(stride, nd), _tuple(pad, nd)
    ks = w.shape[1:-1]
    c_out, c_in = w.shape[0], w.shape[-1]
    spatial = x.shape[1:-1]
    outs = tuple(conv_output_size(n, k, s, p) for n, k, s, p in zip(spatial, ks, stride, pad))
    if min(outs) < 1:
        raise ValueError(f"conv: empty output for input {x.shape}, kernel {ks}")
    xp = np.pad(x.data, [(0, 0), *((p, p) for p in pad), (0, 0)])
    batch = x.shape[0]

    def window(off):
        return (slice(None),) + tuple(
            slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(off, stride, outs)
        ) + (slice(None),)

    offsets = list(itertools.product(*(range(k) for k in ks)))
    out = np.zeros((batch, *outs, c_out), dtype=x.data.dtype)
    for off in offsets:
        out += xp[window(off)] @ w.data[(slice(None), *off, slice(None))].T

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        g2 = g.reshape(-1, c_out)
        for off in offsets:
            win = window(off)
            wk = w.data[(slice(None), *off, slice(None))]
            gxp[win] += g @ wk
            gw[(slice(None), *off, slice(None))] = g2.T @ xp[win].reshape(-1, c_in)
        crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(pad, spatial)) + (slice(None),)
        return gxp[crop], gw

    return record(out, (x, w), backward, f"conv{nd}d")


def conv2d(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects (B, H, W, C), got {x.shape}")
    return conv(x, w, stride, pad)


def conv3d(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    if x.data.ndim != 5:
        raise ValueError(f"conv3d expects (B, D1, D2, D3, C), got {x.shape}")
    return conv(x, w, stride, pad)


def conv_transpose(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    """N-d transposed convolution (gradient of :func:`conv` w.r.t. its input)."""
    nd = x.data.ndim - 2
    if w.data.ndim != nd + 2 or w.shape[0] != x.shape[-1]:
        raise ValueError(f"conv_transpose: kernel {w.shape} incompatible with input {x.shape}")
    stride, pad = _tuple(stride, nd), _tuple(pad, nd)
    ks = w.shape[1:-1]
    c_in, c_out = w.shape[0], w.shape[-1]
    spatial = x.shape[1:-1]
    full = tuple((n - 1) * s + k for n, s, k in zip(spatial, stride, ks))
    outs = tuple(conv_transpose_output_size(n, k, s, p) for n, k, s, p in zip(spatial, ks, stride, pad))
    if min(outs) < 1:
        raise ValueError("conv_transpose: empty output")
    batch = x.shape[0]

    def window(off):
        return (slice(None),) + tuple(
            slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, stride, spatial)
        ) + (slice(None),)

    crop = (slice(None),) + tuple(slice(p, p + m) for p, m in zip(pad, outs)) + (slice(None),)
    offsets = list(itertools.product(*(range(k) for k in ks)))
    buf = np.zeros((batch, *full, c_out), dtype=x.data.dtype)
    for off in offsets:
        buf[window(off)] += x.data @ w.data[(slice(None), *off, slice(None))]
    out = buf[crop].copy()

    def backward(g):
        gbuf = np.zeros_like(buf)
        gbuf[crop] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        x2 = x.data.reshape(-1, c_in)
        for off in offsets:
            gwin = gbuf[window(off)]
            wk = w.data[(slice(None), *off, slice(None))]
            gx += gwin @ wk.T
            gw[(slice(None), *off, slice(None))] = x2.T @ gwin.reshape(-1, c_out)
        return gx, gw

    return record(out, (x, w), backward, f"conv_transpose{nd}d")


def transposed_conv2d(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"transposed_conv2d expects (B, H, W, C), got {x.shape}")
    return conv_transpose(x, w, stride, pad)


# ---------------------------------------------------------------- losses


def l1_loss(pred: Tensor, target) -> Tensor:
    t = as_tensor(target).data
    if pred.shape != t.shape:
        raise ValueError(f"l1_loss: shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size
    return record(np.array(np.abs(diff).mean()), (pred,), lambda g: (g * np.sign(diff) / n,), "l1_loss")


DICE_EPS = 1e-6


def dice_loss(pred: Tensor, target, eps: float = DICE_EPS) -> Tensor:
    """Soft Dice loss ``1 - (2 sum(p t) + eps) / (sum p^2 + sum t^2 + eps)``.

    Both maps are first shifted and scaled by the target's min/max so the
    loss sees the target on [0, 1].  A constant target uses unit range.
    """
    t_raw = as_tensor(target).data
    if pred.shape != t_raw.shape:
        raise ValueError(f"dice_loss: shape mismatch {pred.shape} vs {t_raw.shape}")
    lo = t_raw.min()
    rng = t_raw.max() - lo
    rng = rng if rng > 0 else 1.0
    p = (pred.data - lo) / rng
    t = (t_raw - lo) / rng
    num = 2.0 * np.sum(p * t) + eps
    den = np.sum(p * p) + np.sum(t * t) + eps

    def backward(g):
        dp = -(2.0 * t * den - num * 2.0 * p) / den**2
        return (g * dp / rng,)

    return record(np.array(1.0 - num / den), (pred,), backward, "dice_loss")
