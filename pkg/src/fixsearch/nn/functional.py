"""Convolution, pooling and resampling primitives with exact backward passes.

All spatial ops take NCHW tensors. Convolution is cross-correlation.
"""

from __future__ import annotations

import numpy as np

from fixsearch.errors import ShapeError
from fixsearch.nn.tensor import Tensor, make_result, mean


def _same_pads(k, dilation):
    total = dilation * (k - 1)
    return total // 2, total - total // 2


def _resolve_padding(padding, kh, kw, dilation):
    if padding == "same":
        return _same_pads(kh, dilation) + _same_pads(kw, dilation)
    if padding == "valid":
        return (0, 0, 0, 0)
    if isinstance(padding, int):
        return (padding,) * 4
    raise ShapeError(f"unknown padding {padding!r}")


def _require_4d(x, what):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects a 4-D NCHW tensor, got shape {x.shape}")


def _out_size(n, k, stride, dilation):
    return (n - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, dilation=1, padding="same"):
    """Dense 2-D cross-correlation. ``padding`` is 'same', 'valid' or an int.

    'same' keeps spatial dims at stride 1; odd total padding puts the extra
    row/column at the bottom/right.
    """
    _require_4d(x, "conv2d")
    if weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weights {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match weights {weight.shape}")
    if dilation < 1 or stride < 1:
        raise ShapeError("conv2d: stride and dilation must be >= 1")
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    pt, pb, pl, pr = _resolve_padding(padding, kh, kw, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else x.data
    ho = _out_size(h + pt + pb, kh, stride, dilation)
    wo = _out_size(w + pl + pr, kw, stride, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {weight.shape} too large for input {x.shape}")

    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            cols[:, :, i, j] = xp[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride]
    cols2 = cols.reshape(n, c * kh * kw, ho * wo)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(w2, cols2).reshape(n, o, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]
    padded_shape = xp.shape

    def bw(g):
        g2 = g.reshape(n, o, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros(padded_shape)
            for i in range(kh):
                r0 = i * dilation
                for j in range(kw):
                    c0 = j * dilation
                    gxp[:, :, r0:r0 + stride * (ho - 1) + 1:stride, c0:c0 + stride * (wo - 1) + 1:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, pt:pt + h, pl:pl + w]
        if weight.requires_grad:
            gw = np.matmul(g2, cols2.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        grads = (gx, gw) if bias is None else (gx, gw, gb)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, bw)


def depthwise_conv2d(x, weight, dilation=1, padding="same"):
    """Channel-wise cross-correlation: channel c of ``weight`` (C,1,kh,kw) slides over channel c of ``x``."""
    _require_4d(x, "depthwise_conv2d")
    if weight.ndim != 4 or weight.shape[0] != x.shape[1] or weight.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d: input {x.shape} incompatible with weights {weight.shape}")
    n, c, h, w = x.shape
    _, _, kh, kw = weight.shape
    pt, pb, pl, pr = _resolve_padding(padding, kh, kw, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    ho = _out_size(h + pt + pb, kh, 1, dilation)
    wo = _out_size(w + pl + pr, kw, 1, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"depthwise_conv2d: kernel {weight.shape} too large for input {x.shape}")
    wd = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i * dilation:i * dilation + ho, j * dilation:j * dilation + wo]
            out += wd[None, :, i, j, None, None] * patch

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i * dilation:i * dilation + ho, j * dilation:j * dilation + wo] += wd[None, :, i, j, None, None] * g
            gx = gxp[:, :, pt:pt + h, pl:pl + w]
        if weight.requires_grad:
            gw = np.zeros(weight.shape)
            for i in range(kh):
                for j in range(kw):
                    patch = xp[:, :, i * dilation:i * dilation + ho, j * dilation:j * dilation + wo]
                    gw[:, 0, i, j] = (g * patch).sum(axis=(0, 2, 3))
        return gx, gw

    return make_result(out, (x, weight), bw)


def max_pool2d(x, window=2, stride=2, padding="valid"):
    """Max pooling. padding='same' pads bottom/right with -inf so the output is ceil(H/stride).

    Backward routes each window's gradient to its first maximal element in scan order.
    """
    _require_4d(x, "max_pool2d")
    if window < 1 or stride < 1:
        raise ShapeError("max_pool2d: window and stride must be >= 1")
    n, c, h, w = x.shape
    if padding == "same":
        ho, wo = -(-h // stride), -(-w // stride)
        ph = max((ho - 1) * stride + window - h, 0)
        pw = max((wo - 1) * stride + window - w, 0)
    elif padding == "valid":
        ph = pw = 0
        ho, wo = _out_size(h, window, stride, 1), _out_size(w, window, stride, 1)
    else:
        raise ShapeError(f"unknown padding {padding!r}")
    if ho < 1 or wo < 1:
        raise ShapeError(f"max_pool2d: window {window} larger than input {x.shape}")
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    taps = np.empty((window * window, n, c, ho, wo))
    for i in range(window):
        for j in range(window):
            taps[i * window + j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]
    arg = np.argmax(taps, axis=0)
    out = np.take_along_axis(taps, arg[None], axis=0)[0]
    padded_shape = xp.shape

    def bw(g):
        gxp = np.zeros(padded_shape)
        for i in range(window):
            for j in range(window):
                sel = arg == (i * window + j)
                gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += g * sel
        return (gxp[:, :, :h, :w],)

    return make_result(out, (x,), bw)


def _bilinear_matrix(n_in, factor):
    """Half-pixel (align_corners=False) interpolation weights, shape (n_in*factor, n_in)."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[o, lo] += 1.0 - frac
        m[o, hi] += frac
    return m


def bilinear_upsample2d(x, factor=2):
    _require_4d(x, "bilinear_upsample2d")
    if int(factor) != factor or factor < 1:
        raise ShapeError(f"bilinear_upsample2d: integer factor required, got {factor}")
    _, _, h, w = x.shape
    uh = _bilinear_matrix(h, int(factor))
    uw = _bilinear_matrix(w, int(factor))
    out = uh @ x.data @ uw.T

    def bw(g):
        return (uh.T @ g @ uw,)

    return make_result(out, (x,), bw)


def global_mean(x):
    """Spatial mean over H and W, keeping a 1x1 map per channel."""
    _require_4d(x, "global_mean")
    return mean(x, axis=(2, 3), keepdims=True)
