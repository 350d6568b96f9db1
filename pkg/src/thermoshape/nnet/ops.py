"""Differentiable array operations for the translation networks.

Tensors are plain numpy arrays in (channels, height, width) layout. Every
forward has an explicit backward returning the gradients with respect to
all inputs; correctness is pinned by central finite-difference checks in
the test suite. Float32 is used for training, float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core import Rng

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "deconv2d_forward",
    "deconv2d_backward",
    "leaky_relu",
    "leaky_relu_backward",
    "relu",
    "relu_backward",
    "tanh_out",
    "tanh_backward",
    "sigmoid",
    "sigmoid_backward",
    "xavier_init",
    "conv_out_size",
    "deconv_out_size",
]


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def deconv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _patches(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided (C, Ho, Wo, kh, kw) view of padded input."""
    sw = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return sw[:, ::stride, ::stride]


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, pad: int) -> np.ndarray:
    """Cross-correlation. x: (IC,H,W); w: (OC,IC,kh,kw); b: (OC,)."""
    oc, ic, kh, kw = w.shape
    if x.shape[0] != ic:
        raise ValueError(f"input channels {x.shape[0]} != kernel channels {ic}")
    xp = _pad_hw(x, pad)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ValueError("input smaller than kernel after padding")
    p = _patches(xp, kh, kw, stride)
    y = np.einsum("oikl,ihwkl->ohw", w, p)
    return y + b[:, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, pad: int,
                    dy: np.ndarray):
    """Gradients of conv2d_forward w.r.t. (x, w, b)."""
    oc, ic, kh, kw = w.shape
    _, ho, wo = dy.shape
    xp = _pad_hw(x, pad)
    p = _patches(xp, kh, kw, stride)
    dw = np.einsum("ohw,ihwkl->oikl", dy, p)
    db = dy.sum(axis=(1, 2))
    dxp = np.zeros_like(xp)
    for k in range(kh):
        for l in range(kw):
            contrib = np.einsum("oi,ohw->ihw", w[:, :, k, l], dy)
            dxp[:, k : k + stride * ho : stride,
                l : l + stride * wo : stride] += contrib
    h, wdt = x.shape[1], x.shape[2]
    dx = dxp[:, pad : pad + h, pad : pad + wdt]
    return dx, dw, db


def deconv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                     stride: int, pad: int) -> np.ndarray:
    """Transposed convolution. x: (IC,H,W); w: (IC,OC,kh,kw); b: (OC,)."""
    ic, oc, kh, kw = w.shape
    if x.shape[0] != ic:
        raise ValueError(f"input channels {x.shape[0]} != kernel channels {ic}")
    _, h, wdt = x.shape
    full_h = (h - 1) * stride + kh
    full_w = (wdt - 1) * stride + kw
    y_full = np.zeros((oc, full_h, full_w), dtype=x.dtype)
    for k in range(kh):
        for l in range(kw):
            contrib = np.einsum("io,ihw->ohw", w[:, :, k, l], x)
            y_full[:, k : k + stride * h : stride,
                   l : l + stride * wdt : stride] += contrib
    out_h = full_h - 2 * pad
    out_w = full_w - 2 * pad
    if out_h <= 0 or out_w <= 0:
        raise ValueError("padding larger than transposed output")
    y = y_full[:, pad : pad + out_h, pad : pad + out_w]
    return y + b[:, None, None]


def deconv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, pad: int,
                      dy: np.ndarray):
    """Gradients of deconv2d_forward w.r.t. (x, w, b)."""
    ic, oc, kh, kw = w.shape
    dyp = _pad_hw(dy, pad)
    p = _patches(dyp, kh, kw, stride)  # (OC, H, W, kh, kw)
    dx = np.einsum("iokl,ohwkl->ihw", w, p)
    dw = np.einsum("ihw,ohwkl->iokl", x, p)
    db = dy.sum(axis=(1, 2))
    return dx, dw, db


def leaky_relu(x: np.ndarray, alpha: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_backward(x: np.ndarray, dy: np.ndarray,
                        alpha: float = 0.2) -> np.ndarray:
    return dy * np.where(x >= 0, 1.0, alpha).astype(x.dtype)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def tanh_out(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward from the cached output y = tanh(x)."""
    return dy * (1.0 - y * y)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def xavier_init(shape, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform weights: +-sqrt(6/(fan_in+fan_out)).

    For kernels (out, in, kh, kw) the fans include the receptive-field
    size; for plain matrices they are the two extents.
    """
    shape = tuple(shape)
    if len(shape) < 2:
        raise ValueError("xavier_init needs at least 2 extents")
    receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_out = shape[0] * receptive
    fan_in = shape[1] * receptive
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    n = int(np.prod(shape))
    vals = rng.fill_uniform(n, -bound, bound)
    return vals.reshape(shape).astype(dtype)
