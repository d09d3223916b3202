"""Neural-network primitives: convolution, normalisation, pooling, resampling.

All operations take and return :class:`~atrousseg.autodiff.Node` instances and
register backward closures on the recorded graph.  Layout is NCHW throughout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .autodiff import Node, ShapeError, accumulate, as_node, make_node


def relu(x) -> Node:
    x = as_node(x)
    out = np.maximum(x.value, 0)

    def backward(g):
        accumulate(x, g * (x.value > 0))

    return make_node(out, (x,), backward)


def sigmoid(x) -> Node:
    x = as_node(x)
    out = expit(x.value)

    def backward(g):
        accumulate(x, g * out * (1.0 - out))

    return make_node(out, (x,), backward)


def softmax_channel(x) -> Node:
    """Softmax over axis 1 (the channel axis), numerically stabilised."""
    x = as_node(x)
    if x.ndim < 2:
        raise ShapeError(f"softmax_channel needs a channel axis, got shape {x.shape}")
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        accumulate(x, out * (g - inner))

    return make_node(out, (x,), backward)


def conv2d(x, w, b=None, stride: int = 1, dilation: int = 1) -> Node:
    """2-D cross-correlation with "same" padding.

    Padding totals (k-1)*dilation per axis, split evenly with the extra
    pixel on the trailing side, so the output spatial size is
    ceil(H/stride) x ceil(W/stride) for stride in {1, 2}.
    """
    x, w = as_node(x), as_node(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/weight, got {x.shape} and {w.shape}")
    n, cin, h, wid = x.shape
    cout, wcin, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernels must be square, got {w.shape}")
    if cin != wcin:
        raise ShapeError(
            f"conv2d channel mismatch: input has {cin} channels (shape {x.shape}) "
            f"but weight expects {wcin} (shape {w.shape})")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    if dilation < 1:
        raise ValueError(f"conv2d dilation must be >= 1, got {dilation}")

    k = kh
    total = (k - 1) * dilation
    before, after = total // 2, total - total // 2
    extent = (k - 1) * dilation + 1  # dilated kernel footprint
    xpad = np.pad(x.value, ((0, 0), (0, 0), (before, after), (before, after)))
    win = sliding_window_view(xpad, (extent, extent), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, ::dilation, ::dilation]
    out = np.tensordot(win, w.value, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    ho, wo = out.shape[2], out.shape[3]
    if b is not None:
        b = as_node(b)
        out += b.value[:, None, None]

    def backward(g):
        if w.requires_grad:
            accumulate(w, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            accumulate(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxpad = np.zeros_like(xpad)
            for i in range(k):
                for j in range(k):
                    tap = np.tensordot(g, w.value[:, :, i, j], axes=([1], [0]))
                    gxpad[:, :,
                          i * dilation: i * dilation + ho * stride: stride,
                          j * dilation: j * dilation + wo * stride: stride,
                          ] += tap.transpose(0, 3, 1, 2)
            accumulate(x, gxpad[:, :, before: before + h, before: before + wid])

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.9, eps: float = 1e-5) -> Node:
    """Per-channel batch normalisation over (N, H, W).

    In training mode, batch statistics normalise the input and the running
    buffers are updated in place as momentum*old + (1-momentum)*batch.
    Eval mode normalises with the running buffers.
    """
    x, gamma, beta = as_node(x), as_node(gamma), as_node(beta)
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got shape {x.shape}")
    c = x.shape[1]
    axes = (0, 2, 3)
    m = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        if m < 2:
            raise ValueError(
                "batch_norm: train-mode population per channel is 1; variance undefined")
        mean = x.value.mean(axis=axes)
        var = x.value.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mean[:, None, None]) * invstd[:, None, None]
    out = gamma.value[:, None, None] * xhat + beta.value[:, None, None]

    def backward(g):
        if gamma.requires_grad:
            accumulate(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            gxhat = g * gamma.value[:, None, None]
            if training:
                s1 = gxhat.sum(axis=axes, keepdims=True)
                s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
                gx = (invstd[:, None, None] / m) * (m * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * invstd[:, None, None]
            accumulate(x, gx)

    return make_node(out, (x, gamma, beta), backward)


def max_pool_grid(x, cells: int) -> Node:
    """Grid max pooling: split the plane into cells x cells equal rectangles,
    fill each rectangle with its maximum.  Spatial size is unchanged; the
    gradient routes to the first (row-major) argmax of each rectangle.
    """
    x = as_node(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool_grid expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % cells or w % cells:
        raise ShapeError(
            f"max_pool_grid: spatial extents ({h}, {w}) must be divisible by cells={cells}")
    hc, wc = h // cells, w // cells
    # (n, c, cells, cells, hc*wc) with each rectangle flattened row-major
    rect = (x.value.reshape(n, c, cells, hc, cells, wc)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, cells, cells, hc * wc))
    idx = rect.argmax(axis=-1)
    mx = np.take_along_axis(rect, idx[..., None], axis=-1)
    out = np.broadcast_to(mx.reshape(n, c, cells, cells, 1, 1),
                          (n, c, cells, cells, hc, wc))
    out = np.ascontiguousarray(out.transpose(0, 1, 2, 4, 3, 5)).reshape(n, c, h, w)

    def backward(g):
        grect = (g.reshape(n, c, cells, hc, cells, wc)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, c, cells, cells, hc * wc))
        gsum = grect.sum(axis=-1)
        buf = np.zeros_like(grect)
        np.put_along_axis(buf, idx[..., None], gsum[..., None], axis=-1)
        gx = (buf.reshape(n, c, cells, cells, hc, wc)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
        accumulate(x, gx)

    return make_node(out, (x,), backward)


def nearest_upsample(x, factor: int) -> Node:
    """Nearest-neighbour upsampling; every pixel becomes a factor x factor block."""
    x = as_node(x)
    if x.ndim != 4:
        raise ShapeError(f"nearest_upsample expects NCHW input, got shape {x.shape}")
    if factor < 2:
        raise ValueError(f"nearest_upsample factor must be >= 2, got {factor}")
    n, c, h, w = x.shape
    out = np.broadcast_to(x.value[:, :, :, None, :, None],
                          (n, c, h, factor, w, factor))
    out = np.ascontiguousarray(out).reshape(n, c, h * factor, w * factor)

    def backward(g):
        accumulate(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return make_node(out, (x,), backward)


def concat_channels(xs) -> Node:
    """Concatenate along the channel axis; all inputs share N, H, W."""
    xs = [as_node(v) for v in xs]
    base = xs[0].shape
    for v in xs[1:]:
        if v.ndim != 4 or v.shape[0] != base[0] or v.shape[2:] != base[2:]:
            raise ShapeError(
                f"concat_channels: incompatible shapes {base} vs {v.shape}")
    out = np.concatenate([v.value for v in xs], axis=1)
    offsets = np.cumsum([0] + [v.shape[1] for v in xs])

    def backward(g):
        for v, a, b in zip(xs, offsets[:-1], offsets[1:]):
            accumulate(v, g[:, a:b])

    return make_node(out, tuple(xs), backward)


def channel_slice(x, start: int, stop: int) -> Node:
    """View channels [start, stop) as a differentiable slice."""
    x = as_node(x)
    out = x.value[:, start:stop].copy()

    def backward(g):
        gx = np.zeros_like(x.value)
        gx[:, start:stop] = g
        accumulate(x, gx)

    return make_node(out, (x,), backward)
