"""Toy-scale conditional image-to-image GAN with explicit backpropagation."""

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
from .train import (
    AdamState,
    Checkpoint,
    NonFiniteError,
    TrainConfig,
    adam_step,
    augment_pair,
    bce_with_logits,
    gan_losses,
    infer,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "PatchGANConfig",
    "UNetConfig",
    "init_patchgan_params",
    "init_unet_params",
    "patchgan_backward",
    "patchgan_forward",
    "unet_backward",
    "unet_forward",
    "AdamState",
    "Checkpoint",
    "NonFiniteError",
    "TrainConfig",
    "adam_step",
    "augment_pair",
    "bce_with_logits",
    "gan_losses",
    "infer",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
