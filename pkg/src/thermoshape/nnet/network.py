"""Generator (UNet with skip concatenation) and discriminator (PatchGAN).

Parameters live in ordered name->array dicts so the optimizer, checkpoint
format and gradient checks can all walk them uniformly. Kernel arithmetic
is fixed at 4/2/1 (kernel 4, stride 2, pad 1): every encoder layer halves
the spatial size, every decoder layer doubles it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Rng
from . import ops

__all__ = [
    "UNetConfig",
    "PatchGANConfig",
    "init_unet_params",
    "init_patchgan_params",
    "unet_forward",
    "unet_backward",
    "patchgan_forward",
    "patchgan_backward",
]

KERNEL = 4
STRIDE = 2
PAD = 1
LEAK = 0.2


@dataclass(frozen=True)
class UNetConfig:
    """Encoder-decoder geometry; depth is log2(image_size) so the
    bottleneck is 1x1 and skip i pairs with decoder layer depth-i."""

    image_size: int
    base_channels: int = 8
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        s = self.image_size
        if s < 4 or (s & (s - 1)) != 0:
            raise ValueError("image_size must be a power of two >= 4")

    @property
    def depth(self) -> int:
        return int(self.image_size).bit_length() - 1

    def enc_channels(self, i: int) -> int:
        return min(self.base_channels * (2**i), 8 * self.base_channels)


@dataclass(frozen=True)
class PatchGANConfig:
    """Spatial-logit-map discriminator: num_down_layers strided conv+LReLU
    blocks followed by one strided conv to a single logit channel."""

    num_down_layers: int = 3
    base_channels: int = 8
    in_channels: int = 2

    def channels(self, i: int) -> int:
        return min(self.base_channels * (2**i), 8 * self.base_channels)


def init_unet_params(cfg: UNetConfig, rng: Rng, dtype=np.float32) -> dict:
    params = {}
    n = cfg.depth
    c_in = cfg.in_channels
    for i in range(n):
        c_out = cfg.enc_channels(i)
        params[f"enc{i}.w"] = ops.xavier_init((c_out, c_in, KERNEL, KERNEL), rng, dtype)
        params[f"enc{i}.b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    for j in range(n):
        c_in = cfg.enc_channels(n - 1) if j == 0 else \
            _dec_out_channels(cfg, j - 1) + cfg.enc_channels(n - 1 - j)
        c_out = _dec_out_channels(cfg, j)
        params[f"dec{j}.w"] = ops.xavier_init((c_in, c_out, KERNEL, KERNEL), rng, dtype)
        params[f"dec{j}.b"] = np.zeros(c_out, dtype=dtype)
    return params


def _dec_out_channels(cfg: UNetConfig, j: int) -> int:
    n = cfg.depth
    if j == n - 1:
        return cfg.out_channels
    return cfg.enc_channels(n - 2 - j)


def unet_forward(x: np.ndarray, params: dict, cfg: UNetConfig,
                 want_cache: bool = False):
    """Generator forward pass. x: (in_channels, S, S) -> (out_channels, S, S)
    in [-1, 1]. With want_cache=True returns (y, cache) for backward."""
    n = cfg.depth
    s = cfg.image_size
    if x.shape != (cfg.in_channels, s, s):
        raise ValueError(f"expected input shape {(cfg.in_channels, s, s)}, got {x.shape}")
    cache = {"enc_pre": [], "enc_act": [], "dec_in": [], "dec_pre": []}
    a = x
    for i in range(n):
        h = ops.conv2d_forward(a, params[f"enc{i}.w"], params[f"enc{i}.b"], STRIDE, PAD)
        a = ops.leaky_relu(h, LEAK)
        cache["enc_pre"].append(h)
        cache["enc_act"].append(a)
    d = cache["enc_act"][n - 1]
    for j in range(n):
        if j > 0:
            d = np.concatenate([d, cache["enc_act"][n - 1 - j]], axis=0)
        cache["dec_in"].append(d)
        h = ops.deconv2d_forward(d, params[f"dec{j}.w"], params[f"dec{j}.b"], STRIDE, PAD)
        cache["dec_pre"].append(h)
        d = ops.tanh_out(h) if j == n - 1 else ops.relu(h)
    if want_cache:
        cache["out"] = d
        cache["x"] = x
        return d, cache
    return d


def unet_backward(dy: np.ndarray, cache: dict, params: dict,
                  cfg: UNetConfig) -> dict:
    """Gradients of a scalar loss w.r.t. all generator parameters."""
    n = cfg.depth
    grads = {}
    skip_grads = [None] * n  # gradient flowing into each encoder activation
    d = ops.tanh_backward(cache["out"], dy)
    for j in range(n - 1, -1, -1):
        din, dw, db = ops.deconv2d_backward(
            cache["dec_in"][j], params[f"dec{j}.w"], STRIDE, PAD, d
        )
        grads[f"dec{j}.w"] = dw
        grads[f"dec{j}.b"] = db
        if j > 0:
            c_prev = cache["dec_in"][j].shape[0] - cache["enc_act"][n - 1 - j].shape[0]
            d_prev = din[:c_prev]
            skip_grads[n - 1 - j] = din[c_prev:]
            d = ops.relu_backward(cache["dec_pre"][j - 1], d_prev)
        else:
            # innermost decoder input is the bottleneck activation
            if skip_grads[n - 1] is None:
                skip_grads[n - 1] = din
            else:
                skip_grads[n - 1] = skip_grads[n - 1] + din
    da = skip_grads[n - 1]
    for i in range(n - 1, -1, -1):
        dh = ops.leaky_relu_backward(cache["enc_pre"][i], da, LEAK)
        a_prev = cache["x"] if i == 0 else cache["enc_act"][i - 1]
        dx, dw, db = ops.conv2d_backward(
            a_prev, params[f"enc{i}.w"], STRIDE, PAD, dh
        )
        grads[f"enc{i}.w"] = dw
        grads[f"enc{i}.b"] = db
        if i > 0:
            da = dx
            if skip_grads[i - 1] is not None:
                da = da + skip_grads[i - 1]
    return grads


def init_patchgan_params(cfg: PatchGANConfig, rng: Rng, dtype=np.float32) -> dict:
    params = {}
    c_in = cfg.in_channels
    for i in range(cfg.num_down_layers):
        c_out = cfg.channels(i)
        params[f"d{i}.w"] = ops.xavier_init((c_out, c_in, KERNEL, KERNEL), rng, dtype)
        params[f"d{i}.b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    params["head.w"] = ops.xavier_init((1, c_in, KERNEL, KERNEL), rng, dtype)
    params["head.b"] = np.zeros(1, dtype=dtype)
    return params


def patchgan_forward(x_cond: np.ndarray, y: np.ndarray, params: dict,
                     cfg: PatchGANConfig, want_cache: bool = False):
    """Discriminator logit map for a (condition, candidate) image pair.

    The two single-channel images are concatenated on the channel axis, in
    that order, so conditioning is order-sensitive.
    """
    if x_cond.shape != y.shape:
        raise ValueError("condition and candidate must have the same shape")
    a = np.concatenate([x_cond, y], axis=0)
    cache = {"in": a, "pre": [], "act": []}
    for i in range(cfg.num_down_layers):
        h = ops.conv2d_forward(a, params[f"d{i}.w"], params[f"d{i}.b"], STRIDE, PAD)
        a = ops.leaky_relu(h, LEAK)
        cache["pre"].append(h)
        cache["act"].append(a)
    logits = ops.conv2d_forward(a, params["head.w"], params["head.b"], STRIDE, PAD)
    if want_cache:
        return logits, cache
    return logits


def patchgan_backward(dlogits: np.ndarray, cache: dict, params: dict,
                      cfg: PatchGANConfig):
    """Gradients w.r.t. discriminator parameters and both input images.

    Returns (grads, dx_cond, dy_img); the candidate-image gradient is what
    trains the generator.
    """
    grads = {}
    nd = cfg.num_down_layers
    d, dw, db = ops.conv2d_backward(
        cache["act"][nd - 1], params["head.w"], STRIDE, PAD, dlogits
    )
    grads["head.w"] = dw
    grads["head.b"] = db
    for i in range(nd - 1, -1, -1):
        dh = ops.leaky_relu_backward(cache["pre"][i], d, LEAK)
        a_prev = cache["in"] if i == 0 else cache["act"][i - 1]
        d, dw, db = ops.conv2d_backward(a_prev, params[f"d{i}.w"], STRIDE, PAD, dh)
        grads[f"d{i}.w"] = dw
        grads[f"d{i}.b"] = db
    c = cache["in"].shape[0] // 2
    return grads, d[:c], d[c:]
