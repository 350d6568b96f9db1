"""Thermography-to-geometry prediction and modal surface evaluation."""

from .core import FloatField, GrayImage, Rng, load_pgm, save_pgm
from .dmd import (
    ModalBasis,
    ModalSpectrum,
    build_basis,
    load_basis,
    project,
    reconstruct,
    save_basis,
    spectrum_similarity,
)

__version__ = "0.1.0"

__all__ = [
    "FloatField",
    "GrayImage",
    "ModalBasis",
    "ModalSpectrum",
    "Rng",
    "build_basis",
    "load_basis",
    "load_pgm",
    "project",
    "reconstruct",
    "save_basis",
    "save_pgm",
    "spectrum_similarity",
    "__version__",
]
