"""Synthetic paired thermography/geometry data with known modal truth.

Stands in for a physical molded-part dataset: each part's geometry is a
random combination of low-order basis modes, and its thermography is a
fixed monotone nonlinear map of the geometry, blurred and noised. The
generating spectrum is recorded so recovery can be checked exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FloatField, GrayImage, Rng, save_pgm
from .dmd import ModalBasis, ModalSpectrum, reconstruct, save_spectrum_csv
from .preprocess import NormalizationStats, quantize

__all__ = ["SynthConfig", "generate_pair", "generate_dataset"]

DEFAULT_N_TRAIN = 23
DEFAULT_N_VAL = 14
N_SETTINGS = 12  # process-setting groups; one is reserved for validation


@dataclass(frozen=True)
class SynthConfig:
    grid: int = 32
    k_active: int = 12
    coeff_lo: float = -25.0
    coeff_hi: float = 25.0
    thermal_blur_sigma: float = 1.0
    noise_std: float = 2.0  # in 8-bit levels
    seed: int = 0


def _gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return data
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    k /= k.sum()
    padded = np.pad(data, ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(data)
    for i, wk in enumerate(k):
        out += wk * padded[i : i + data.shape[0], :]
    padded = np.pad(out, ((0, 0), (radius, radius)), mode="edge")
    out2 = np.zeros_like(data)
    for i, wk in enumerate(k):
        out2 += wk * padded[:, i : i + data.shape[1]]
    return out2


def _thermal_map(geom: np.ndarray) -> np.ndarray:
    """Fixed monotone nonlinearity from geometry to a [0,1] thermal field."""
    lo = geom.min()
    hi = geom.max()
    u = (geom - lo) / (hi - lo) if hi > lo else np.zeros_like(geom)
    return (u + 0.3 * u**2) / 1.3


def _draw_coeffs(cfg: SynthConfig, basis: ModalBasis, rng: Rng,
                 base: np.ndarray | None = None) -> np.ndarray:
    coeffs = np.zeros(basis.K)
    fresh = rng.fill_uniform(cfg.k_active, cfg.coeff_lo, cfg.coeff_hi)
    if base is None:
        coeffs[: cfg.k_active] = fresh
    else:
        # per-part jitter around a shared process-setting signature
        coeffs[: cfg.k_active] = base + 0.15 * fresh
    return coeffs


def generate_pair(cfg: SynthConfig, basis: ModalBasis, rng: Rng,
                  base_coeffs: np.ndarray | None = None):
    """One (thermography, geometry, true spectrum) triple.

    Geometry carries deformation only on the first k_active modes; the
    thermography is the monotone map of the geometry, Gaussian-blurred and
    perturbed with additive noise, then both are quantized to 8 bits.
    """
    if basis.h != cfg.grid or basis.w != cfg.grid:
        raise ValueError("basis grid does not match SynthConfig.grid")
    if cfg.k_active > basis.K:
        raise ValueError("k_active exceeds basis mode count")
    coeffs = _draw_coeffs(cfg, basis, rng, base_coeffs)
    spectrum = ModalSpectrum(coeffs)
    geom = reconstruct(spectrum, basis)
    thermal = _thermal_map(geom.data)
    thermal = _gaussian_blur(thermal, cfg.thermal_blur_sigma)
    if cfg.noise_std > 0:
        noise = rng.fill_normal(thermal.size).reshape(thermal.shape)
        thermal = thermal + (cfg.noise_std / 255.0) * noise
    g_stats = NormalizationStats(float(geom.data.min()), float(geom.data.max()))
    t_lo = float(thermal.min())
    t_hi = float(thermal.max())
    t_stats = NormalizationStats(t_lo, t_hi)
    geom_img = quantize(geom, g_stats)
    thermo_img = quantize(FloatField(cfg.grid, cfg.grid, thermal), t_stats)
    return thermo_img, geom_img, spectrum


def generate_dataset(cfg: SynthConfig, basis: ModalBasis, out_dir,
                     n_train: int = DEFAULT_N_TRAIN,
                     n_val: int = DEFAULT_N_VAL) -> dict:
    """Write train/ and val/ image pairs plus truth/ spectrum CSVs.

    Parts are grouped into process settings (shared base coefficients with
    per-part jitter); setting 0 appears only in the validation split so a
    fully unseen configuration is always available.
    """
    out = Path(out_dir)
    rng = Rng(cfg.seed)
    setting_rng = rng.derive(100)
    bases = [
        setting_rng.fill_uniform(cfg.k_active, cfg.coeff_lo, cfg.coeff_hi)
        for _ in range(N_SETTINGS)
    ]
    manifest = {"train": [], "val": []}
    (out / "truth").mkdir(parents=True, exist_ok=True)
    next_id = 0
    for split, count, settings in (
        ("train", n_train, list(range(1, N_SETTINGS))),
        ("val", n_val, list(range(N_SETTINGS))),
    ):
        (out / split).mkdir(parents=True, exist_ok=True)
        part_rng = rng.derive(1 if split == "train" else 2)
        for i in range(count):
            setting = settings[i % len(settings)]
            thermo, geom, spectrum = generate_pair(
                cfg, basis, part_rng, base_coeffs=bases[setting]
            )
            pid = f"{next_id:03d}"
            next_id += 1
            save_pgm(thermo, out / split / f"pair_{pid}_thermo.pgm")
            save_pgm(geom, out / split / f"pair_{pid}_geom.pgm")
            save_spectrum_csv(spectrum, out / "truth" / f"pair_{pid}.csv")
            manifest[split].append({"part_id": pid, "setting": setting})
    return manifest
