"""Dense tensor ops for a small sequential CNN, with manual backprop.

Layout is NHWC (batch, height, width, channels) everywhere; conv kernels
are KhxKwxCinxCout and use the cross-correlation convention (no kernel
flip). All public single-image entry points accept HxWxC arrays.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _im2col(x, kh, kw, stride, pad):
    """Gather sliding kh x kw patches into (N, Ho, Wo, kh*kw*C)."""
    n, h, w, c = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"kernel {kh}x{kw} (pad {pad}) does not fit input {h}x{w}"
        )
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kh * kw * c), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            patch = xp[:, a : a + ho * stride : stride, b : b + wo * stride : stride, :]
            cols[..., (a * kw + b) * c : (a * kw + b + 1) * c] = patch
    return cols, (ho, wo)


def _col2im(dcols, x_shape, kh, kw, stride, pad):
    """Scatter-add column gradients back onto the (padded) input."""
    n, h, w, c = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dcols.dtype)
    for a in range(kh):
        for b in range(kw):
            sl = dcols[..., (a * kw + b) * c : (a * kw + b + 1) * c]
            dxp[:, a : a + ho * stride : stride, b : b + wo * stride : stride, :] += sl
    if pad:
        return dxp[:, pad : h + pad, pad : w + pad, :]
    return dxp


def conv_forward(x, kernels, bias, stride, pad):
    """Batched cross-correlation. Returns (out, cache)."""
    kh, kw, cin, cout = kernels.shape
    if x.shape[3] != cin:
        raise ShapeError(
            f"input channels {x.shape[3]} != kernel channels {cin} "
            f"(input {x.shape}, kernel {kernels.shape})"
        )
    cols, (ho, wo) = _im2col(x, kh, kw, stride, pad)
    wmat = kernels.reshape(kh * kw * cin, cout).astype(x.dtype)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.astype(x.dtype)
    cache = (cols, x.shape, kernels.shape, stride, pad)
    return out, cache


def conv_backward(dout, cache, kernels, want_param_grads=True):
    """Gradients of conv_forward. Returns (dx, dkernels, dbias)."""
    cols, x_shape, k_shape, stride, pad = cache
    kh, kw, cin, cout = k_shape
    wmat = kernels.reshape(kh * kw * cin, cout).astype(dout.dtype)
    dcols = dout @ wmat.T
    dx = _col2im(dcols, x_shape, kh, kw, stride, pad)
    if not want_param_grads:
        return dx, None, None
    flat_cols = cols.reshape(-1, kh * kw * cin)
    flat_dout = dout.reshape(-1, cout)
    dkernels = (flat_cols.T @ flat_dout).reshape(k_shape)
    dbias = flat_dout.sum(axis=0)
    return dx, dkernels, dbias


def maxpool_forward(x, window, stride):
    """Batched max pooling with argmax retained for backward routing."""
    n, h, w, c = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} larger than input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    stacked = np.empty((n, ho, wo, window * window, c), dtype=x.dtype)
    for a in range(window):
        for b in range(window):
            stacked[:, :, :, a * window + b, :] = x[
                :, a : a + ho * stride : stride, b : b + wo * stride : stride, :
            ]
    arg = stacked.argmax(axis=3)
    out = np.take_along_axis(stacked, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    cache = (arg, x.shape, window, stride)
    return out, cache


def maxpool_backward(dout, cache):
    arg, x_shape, window, stride = cache
    n, h, w, c = x_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dx = np.zeros((n, h, w, c), dtype=dout.dtype)
    for k in range(window * window):
        a, b = divmod(k, window)
        mask = arg == k
        dx[:, a : a + ho * stride : stride, b : b + wo * stride : stride, :] += (
            dout * mask
        )
    return dx


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    # subgradient at exactly 0 is 0
    return dout * (cache > 0)


def dense_forward(x, weights, bias):
    out = x @ weights.astype(x.dtype) + bias.astype(x.dtype)
    return out, x


def dense_backward(dout, cache, weights, want_param_grads=True):
    dx = dout @ weights.T.astype(dout.dtype)
    if not want_param_grads:
        return dx, None, None
    dweights = cache.T @ dout
    dbias = dout.sum(axis=0)
    return dx, dweights, dbias


def conv2d(image, kernels, stride=1, padding=0):
    """Single-image convolution: HxWxC input, KhxKwxCxF kernels."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    image = np.asarray(image, dtype=np.float32)
    kernels = np.asarray(kernels, dtype=np.float32)
    out, _ = conv_forward(image[None], kernels, None, stride, padding)
    return out[0]


def maxpool2d(image, window, stride):
    """Single-image max pooling: HxWxC input."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    image = np.asarray(image, dtype=np.float32)
    out, _ = maxpool_forward(image[None], window, stride)
    return out[0]
