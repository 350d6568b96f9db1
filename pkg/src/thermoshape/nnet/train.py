"""Adversarial training loop: losses, Adam, augmentation, checkpoints.

Batch size is fixed at 1 and there is no normalization anywhere; each
dataset pass alternates a discriminator update and a generator update per
sample. Everything is deterministic for a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ..core import GrayImage, Rng
from ..preprocess import resample_bicubic
from . import ops
from .network import (
    PatchGANConfig,
    UNetConfig,
    init_patchgan_params,
    init_unet_params,
    patchgan_backward,
    patchgan_forward,
    unet_backward,
    unet_forward,
)

__all__ = [
    "TrainConfig",
    "AdamState",
    "Checkpoint",
    "NonFiniteError",
    "gan_losses",
    "bce_with_logits",
    "adam_step",
    "augment_pair",
    "train",
    "infer",
    "save_checkpoint",
    "load_checkpoint",
    "image_to_tensor",
    "tensor_to_image",
]

CHECKPOINT_MAGIC = b"P2PW"
CHECKPOINT_VERSION = 1


class NonFiniteError(Exception):
    """A gradient or loss became non-finite; carries the culprit's name."""


@dataclass(frozen=True)
class TrainConfig:
    image_size: int = 128
    base_channels: int = 8
    num_down_layers: int = 3
    epochs: int = 200
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_l1: float = 100.0
    seed: int = 0
    jitter_scale: float = 1.125
    mirror_prob: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_l1 < 0:
            raise ValueError("lambda_l1 must be non-negative")

    def unet(self) -> UNetConfig:
        return UNetConfig(self.image_size, self.base_channels)

    def patchgan(self) -> PatchGANConfig:
        return PatchGANConfig(self.num_down_layers, self.base_channels)


def bce_with_logits(logits: np.ndarray, target: float):
    """Mean binary cross-entropy against a constant target, with the
    numerically stable log-sum-exp form. Returns (loss, dlogits)."""
    z = logits.astype(np.float64)
    loss = np.maximum(z, 0.0) - z * target + np.log1p(np.exp(-np.abs(z)))
    grad = (ops.sigmoid(z) - target) / z.size
    return float(loss.mean()), grad.astype(logits.dtype)


def gan_losses(real_logits: np.ndarray, fake_logits: np.ndarray,
               gen_out: np.ndarray, target: np.ndarray, lambda_l1: float):
    """Scalar objectives: discriminator loss, generator loss, L1 term.

    loss_D = BCE(real -> 1) + BCE(fake -> 0);
    loss_G = BCE(fake -> 1) + lambda_l1 * mean|gen_out - target|.
    """
    l_real, _ = bce_with_logits(real_logits, 1.0)
    l_fake0, _ = bce_with_logits(fake_logits, 0.0)
    l_fake1, _ = bce_with_logits(fake_logits, 1.0)
    l1 = float(np.mean(np.abs(gen_out.astype(np.float64) - target)))
    loss_d = l_real + l_fake0
    loss_g = l_fake1 + lambda_l1 * l1
    return loss_d, loss_g, l1


@dataclass
class AdamState:
    """First/second moment estimates per parameter, plus the step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState,
              cfg: TrainConfig) -> None:
    """One Adam update with bias correction, in place."""
    state.t += 1
    t = state.t
    b1 = cfg.beta1
    b2 = cfg.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        p -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)


def image_to_tensor(img: GrayImage, dtype=np.float32) -> np.ndarray:
    """Map levels [0,255] to a (1,H,W) tensor in [-1,1]."""
    return (img.data.astype(dtype) / 127.5 - 1.0)[None, :, :]


def tensor_to_image(t: np.ndarray, scale: float = 1.0,
                    offset: float = 0.0) -> GrayImage:
    """Map a (1,H,W) tensor in [-1,1] back to 8-bit levels (half-up)."""
    vals = (np.asarray(t, dtype=np.float64)[0] + 1.0) * 127.5
    levels = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
    h, w = levels.shape
    return GrayImage(w, h, levels, scale=scale, offset=offset)


def augment_pair(x: GrayImage, y: GrayImage, rng: Rng, cfg: TrainConfig):
    """Random jitter and mirroring, identical on both images.

    Both images are upscaled by jitter_scale (bicubic), the same random
    window is cropped back to the original size, and the same horizontal
    mirror is applied with probability mirror_prob.
    """
    if x.data.shape != y.data.shape:
        raise ValueError("pair images must have the same size")
    s = x.width
    big = int(round(cfg.jitter_scale * s))
    xb = resample_bicubic(x, big, big)
    yb = resample_bicubic(y, big, big)
    span = big - s
    ox = rng.next_below(span + 1) if span > 0 else 0
    oy = rng.next_below(span + 1) if span > 0 else 0
    xd = xb.data[oy : oy + s, ox : ox + s]
    yd = yb.data[oy : oy + s, ox : ox + s]
    if rng.next_f64() < cfg.mirror_prob:
        xd = xd[:, ::-1]
        yd = yd[:, ::-1]
    return (
        GrayImage(s, s, xd.copy(), scale=x.scale, offset=x.offset),
        GrayImage(s, s, yd.copy(), scale=y.scale, offset=y.offset),
    )


@dataclass
class Checkpoint:
    config: TrainConfig
    gen_params: dict
    disc_params: dict
    gen_state: AdamState
    disc_state: AdamState
    epoch: int = 0


def _train_step(xt, yt, ckpt: Checkpoint, cfg: TrainConfig):
    """One discriminator update then one generator update on a single pair."""
    ucfg = cfg.unet()
    pcfg = cfg.patchgan()
    fake, gen_cache = unet_forward(xt, ckpt.gen_params, ucfg, want_cache=True)

    # discriminator step (generator output treated as constant)
    real_logits, real_cache = patchgan_forward(xt, yt, ckpt.disc_params, pcfg,
                                               want_cache=True)
    fake_logits, fake_cache = patchgan_forward(xt, fake, ckpt.disc_params, pcfg,
                                               want_cache=True)
    l_real, d_real = bce_with_logits(real_logits, 1.0)
    l_fake0, d_fake = bce_with_logits(fake_logits, 0.0)
    g1, _, _ = patchgan_backward(d_real, real_cache, ckpt.disc_params, pcfg)
    g2, _, _ = patchgan_backward(d_fake, fake_cache, ckpt.disc_params, pcfg)
    d_grads = {k: g1[k] + g2[k] for k in g1}
    adam_step(ckpt.disc_params, d_grads, ckpt.disc_state, cfg)
    loss_d = l_real + l_fake0

    # generator step against the updated discriminator
    fake_logits2, fake_cache2 = patchgan_forward(xt, fake, ckpt.disc_params,
                                                 pcfg, want_cache=True)
    loss_g_adv, dlogits = bce_with_logits(fake_logits2, 1.0)
    _, _, dfake_adv = patchgan_backward(dlogits, fake_cache2,
                                        ckpt.disc_params, pcfg)
    diff = fake.astype(np.float64) - yt
    l1 = float(np.mean(np.abs(diff)))
    dfake_l1 = cfg.lambda_l1 * np.sign(diff) / diff.size
    dfake = dfake_adv + dfake_l1.astype(fake.dtype)
    g_grads = unet_backward(dfake, gen_cache, ckpt.gen_params, ucfg)
    adam_step(ckpt.gen_params, g_grads, ckpt.gen_state, cfg)
    return loss_d, loss_g_adv, l1


def train(dataset, cfg: TrainConfig, dtype=np.float32,
          epoch_callback=None, init_checkpoint: Checkpoint | None = None):
    """Train on (thermo, geom) GrayImage pairs.

    Returns (checkpoint, curves) where curves is a list of per-epoch
    (epoch, loss_d, loss_g_adv, loss_g_l1) means. Deterministic for a
    fixed seed: shuffling, augmentation and initialization all derive from
    cfg.seed.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset must contain at least one pair")
    for x, y in dataset:
        if x.data.shape != y.data.shape or x.width != cfg.image_size:
            raise ValueError("all pairs must be image_size x image_size")
    root = Rng(cfg.seed)
    init_rng = root.derive(1)
    shuffle_rng = root.derive(2)
    aug_rng = root.derive(3)
    if init_checkpoint is not None:
        ckpt = init_checkpoint
    else:
        ckpt = Checkpoint(
            config=cfg,
            gen_params=init_unet_params(cfg.unet(), init_rng, dtype),
            disc_params=init_patchgan_params(cfg.patchgan(), init_rng, dtype),
            gen_state=AdamState(),
            disc_state=AdamState(),
        )
    curves = []
    order = list(range(len(dataset)))
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng.shuffle(order)
        sums = np.zeros(3)
        for idx in order:
            x_img, y_img = dataset[idx]
            xa, ya = augment_pair(x_img, y_img, aug_rng, cfg)
            xt = image_to_tensor(xa, dtype)
            yt = image_to_tensor(ya, dtype)
            losses = _train_step(xt, yt, ckpt, cfg)
            if not all(np.isfinite(v) for v in losses):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch}, sample {idx}: {losses}"
                )
            sums += losses
        ckpt.epoch = epoch
        mean = sums / len(order)
        curves.append((epoch, float(mean[0]), float(mean[1]), float(mean[2])))
        if epoch_callback is not None:
            epoch_callback(epoch, mean)
    return ckpt, curves


def infer(ckpt: Checkpoint, x: GrayImage) -> GrayImage:
    """Deterministic forward pass mapping a thermography image to a
    predicted geometry image (levels 0-255)."""
    cfg = ckpt.config
    if x.width != cfg.image_size or x.height != cfg.image_size:
        raise ValueError(
            f"input {x.width}x{x.height} does not match checkpoint "
            f"image_size {cfg.image_size}"
        )
    xt = image_to_tensor(x, next(iter(ckpt.gen_params.values())).dtype)
    y = unet_forward(xt, ckpt.gen_params, cfg.unet())
    return tensor_to_image(y)


_CFG_FIELDS = [
    ("image_size", int), ("base_channels", int), ("num_down_layers", int),
    ("epochs", int), ("lr", float), ("beta1", float), ("beta2", float),
    ("eps", float), ("lambda_l1", float), ("seed", int),
    ("jitter_scale", float), ("mirror_prob", float),
]


def _write_tensor(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f4").tobytes())


def _read_tensor(buf, off):
    (nlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    name = buf[off : off + nlen].decode("utf-8")
    off += nlen
    (ndim,) = struct.unpack_from("<I", buf, off)
    off += 4
    shape = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    off += 4 * count
    return name, arr.reshape(shape).copy(), off


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Binary checkpoint: magic, version, text config block, named f32
    parameter tensors, optimizer moments, step counts, epoch."""
    cfg_text = "\n".join(
        f"{name}={getattr(ckpt.config, name)!r}" for name, _ in _CFG_FIELDS
    )
    groups = [
        ("g", ckpt.gen_params, ckpt.gen_state),
        ("d", ckpt.disc_params, ckpt.disc_state),
    ]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        blob = cfg_text.encode("utf-8")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for prefix, params, state in groups:
            f.write(struct.pack("<I", len(params)))
            for name, arr in params.items():
                _write_tensor(f, f"{prefix}:{name}", arr)
            f.write(struct.pack("<I", len(state.m)))
            for name in state.m:
                _write_tensor(f, f"{prefix}:m:{name}", state.m[name])
                _write_tensor(f, f"{prefix}:v:{name}", state.v[name])
            f.write(struct.pack("<I", state.t))
        f.write(struct.pack("<I", ckpt.epoch))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (clen,) = struct.unpack_from("<I", buf, 8)
    off = 12
    cfg_text = buf[off : off + clen].decode("utf-8")
    off += clen
    kv = dict(line.split("=", 1) for line in cfg_text.splitlines() if line)
    cfg = TrainConfig(**{name: typ(kv[name]) for name, typ in _CFG_FIELDS})
    out = {}
    for prefix in ("g", "d"):
        (nparams,) = struct.unpack_from("<I", buf, off)
        off += 4
        params = {}
        for _ in range(nparams):
            name, arr, off = _read_tensor(buf, off)
            params[name.split(":", 1)[1]] = arr
        (nmom,) = struct.unpack_from("<I", buf, off)
        off += 4
        state = AdamState()
        for _ in range(nmom):
            name, arr, off = _read_tensor(buf, off)
            state.m[name.split(":", 2)[2]] = arr
            name, arr, off = _read_tensor(buf, off)
            state.v[name.split(":", 2)[2]] = arr
        (state.t,) = struct.unpack_from("<I", buf, off)
        off += 4
        out[prefix] = (params, state)
    (epoch,) = struct.unpack_from("<I", buf, off)
    return Checkpoint(cfg, out["g"][0], out["d"][0], out["g"][1], out["d"][1],
                      epoch)
