"""Image preparation chain: stabilization, normalization, crop, resampling.

The chain runs on ``FloatField`` inputs (physical units) and ends with an
8-bit quantization that records the resulting resolution in the image
metadata. All operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FloatField, GrayImage, load_pgm

__all__ = [
    "Shift",
    "NormalizationStats",
    "UntrackableError",
    "DegenerateRangeError",
    "lk_shift",
    "apply_shift",
    "dataset_stats",
    "quantize",
    "crop",
    "resample_bicubic",
    "load_field",
]


class UntrackableError(Exception):
    """Optical flow normal equations are singular (textureless image)."""


class DegenerateRangeError(Exception):
    """All pixels equal: no min-max normalization possible."""


@dataclass(frozen=True)
class Shift:
    """Pure-translation alignment result, in (sub)pixels."""

    dx: float
    dy: float


@dataclass(frozen=True)
class NormalizationStats:
    """Dataset-global intensity range used for 8-bit quantization."""

    global_min: float
    global_max: float

    def __post_init__(self):
        if not (self.global_max > self.global_min):
            raise DegenerateRangeError(
                f"degenerate range [{self.global_min}, {self.global_max}]"
            )


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom kernel (a = -0.5) evaluated at |t|."""
    a = -0.5
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, a * (t**3 - 5.0 * t**2 + 8.0 * t - 4.0), 0.0),
    )
    return w


def _resample_axis(data: np.ndarray, out_n: int, axis: int) -> np.ndarray:
    """Cubic-convolution resample along one axis with edge clamping."""
    in_n = data.shape[axis]
    # center-aligned sample positions in source coordinates
    pos = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    out = None
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, in_n - 1)
        w = _cubic_weights(frac - k)
        taken = np.take(data, idx, axis=axis)
        shape = [1] * data.ndim
        shape[axis] = out_n
        term = taken * w.reshape(shape)
        out = term if out is None else out + term
    return out


def _sample_bicubic_at(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample data at real coordinate grids (ys, xs) with edge clamping."""
    h, w = data.shape
    bx = np.floor(xs).astype(np.int64)
    by = np.floor(ys).astype(np.int64)
    fx = xs - bx
    fy = ys - by
    out = np.zeros_like(xs, dtype=np.float64)
    for ky in range(-1, 3):
        iy = np.clip(by + ky, 0, h - 1)
        wy = _cubic_weights(fy - ky)
        row_acc = np.zeros_like(xs, dtype=np.float64)
        for kx in range(-1, 3):
            ix = np.clip(bx + kx, 0, w - 1)
            wx = _cubic_weights(fx - kx)
            row_acc += data[iy, ix] * wx
        out += row_acc * wy
    return out


def resample_bicubic(img, out_w: int, out_h: int):
    """Separable cubic-convolution resampling (Catmull-Rom, a = -0.5).

    Accepts a FloatField or a GrayImage and returns the same kind; 8-bit
    outputs are rounded half-up and clamped, metadata preserved.
    """
    if out_w < 2 or out_h < 2:
        raise ValueError("output size must be at least 2x2")
    if isinstance(img, GrayImage):
        vals = img.data.astype(np.float64)
        vals = _resample_axis(vals, out_h, axis=0)
        vals = _resample_axis(vals, out_w, axis=1)
        levels = np.clip(_round_half_up(vals), 0, 255).astype(np.uint8)
        return GrayImage(out_w, out_h, levels, scale=img.scale, offset=img.offset)
    vals = _resample_axis(img.data, out_h, axis=0)
    vals = _resample_axis(vals, out_w, axis=1)
    return FloatField(out_w, out_h, vals)


def apply_shift(img: FloatField, s: Shift) -> FloatField:
    """Translate a field by (dx, dy) using bicubic resampling.

    Output pixel (x, y) samples the input at (x - dx, y - dy); samples
    falling outside the grid clamp to the nearest edge value.
    """
    h, w = img.data.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    vals = _sample_bicubic_at(img.data, xs - s.dx, ys - s.dy)
    return FloatField(w, h, vals)


def _downsample2(data: np.ndarray) -> np.ndarray:
    """2x2 box-average pyramid reduction (odd trailing row/col dropped)."""
    h, w = data.shape
    h2, w2 = h // 2, w // 2
    d = data[: 2 * h2, : 2 * w2]
    return 0.25 * (d[0::2, 0::2] + d[1::2, 0::2] + d[0::2, 1::2] + d[1::2, 1::2])


def lk_shift(template: FloatField, frame: FloatField, levels: int = 3,
             window: int = 8, iters: int = 10) -> Shift:
    """Estimate the translation aligning ``frame`` to ``template``.

    Coarse-to-fine pyramid of box-averaged levels; at each level a
    Gauss-Newton iteration on the pure-translation model with
    central-difference gradients. The returned shift is the one to pass to
    ``apply_shift(frame, shift)`` to stabilize the frame onto the template.
    """
    if template.data.shape != frame.data.shape:
        raise ValueError("template and frame must have the same size")
    if window < 2:
        raise ValueError("window must be >= 2")
    if levels < 1:
        raise ValueError("levels must be >= 1")

    pyr_t = [template.data]
    pyr_f = [frame.data]
    for _ in range(levels - 1):
        if min(pyr_t[-1].shape) < 2 * (window + 4):
            break
        pyr_t.append(_downsample2(pyr_t[-1]))
        pyr_f.append(_downsample2(pyr_f[-1]))

    dx, dy = 0.0, 0.0
    for lvl in range(len(pyr_t) - 1, -1, -1):
        t = pyr_t[lvl]
        f = pyr_f[lvl]
        h, w = t.shape
        # evaluation window: centered square of half-width `window`,
        # kept off the clamped borders
        cy, cx = h // 2, w // 2
        half = min(window, cy - 3, cx - 3)
        if half < 2:
            half = min(h, w) // 2 - 3
            if half < 2:
                continue
        ys = slice(cy - half, cy + half + 1)
        xs = slice(cx - half, cx + half + 1)
        for _ in range(iters):
            warped = apply_shift(FloatField(w, h, f), Shift(dx, dy)).data
            gx = np.zeros_like(warped)
            gy = np.zeros_like(warped)
            gx[:, 1:-1] = 0.5 * (warped[:, 2:] - warped[:, :-2])
            gy[1:-1, :] = 0.5 * (warped[2:, :] - warped[:-2, :])
            e = (warped - t)[ys, xs]
            wx = gx[ys, xs]
            wy = gy[ys, xs]
            g11 = float(np.sum(wx * wx))
            g12 = float(np.sum(wx * wy))
            g22 = float(np.sum(wy * wy))
            det = g11 * g22 - g12 * g12
            norm = max(g11, g22)
            if norm <= 0.0 or det <= 1e-12 * norm * norm:
                raise UntrackableError("singular normal matrix: image untrackable")
            b1 = float(np.sum(wx * e))
            b2 = float(np.sum(wy * e))
            ddx = (g22 * b1 - g12 * b2) / det
            ddy = (g11 * b2 - g12 * b1) / det
            dx += ddx
            dy += ddy
            if abs(ddx) < 1e-6 and abs(ddy) < 1e-6:
                break
        if lvl > 0:
            dx *= 2.0
            dy *= 2.0
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise UntrackableError("optical flow diverged")
    return Shift(dx, dy)


def dataset_stats(images) -> NormalizationStats:
    """Global min and max over all pixels of all fields."""
    images = list(images)
    if not images:
        raise ValueError("dataset_stats requires a non-empty list")
    lo = min(float(img.data.min()) for img in images)
    hi = max(float(img.data.max()) for img in images)
    if not hi > lo:
        raise DegenerateRangeError("all pixels equal across the dataset")
    return NormalizationStats(lo, hi)


def quantize(img: FloatField, stats: NormalizationStats) -> GrayImage:
    """Map physical values to 8-bit levels against a dataset-global range.

    level = round((v - min) / (max - min) * 255), half-up, clamped; the
    quantization resolution (max - min)/255 is stored as the image scale.
    """
    span = stats.global_max - stats.global_min
    levels = _round_half_up((img.data - stats.global_min) / span * 255.0)
    levels = np.clip(levels, 0, 255).astype(np.uint8)
    return GrayImage(img.width, img.height, levels,
                     scale=span / 255.0, offset=stats.global_min)


def crop(img: GrayImage, x0: int, y0: int, w: int, h: int) -> GrayImage:
    """Sub-image copy; the rectangle must lie inside the image."""
    if w <= 0 or h <= 0:
        raise ValueError("crop size must be positive")
    if x0 < 0 or y0 < 0 or x0 + w > img.width or y0 + h > img.height:
        raise ValueError(
            f"crop rectangle ({x0},{y0},{w},{h}) outside "
            f"{img.width}x{img.height} image"
        )
    return GrayImage(w, h, img.data[y0 : y0 + h, x0 : x0 + w].copy(),
                     scale=img.scale, offset=img.offset)


def load_field(path) -> FloatField:
    """Read a measurement as a FloatField in physical units.

    PGM files go through their scale/offset metadata; CSV files are plain
    rows of comma-separated reals.
    """
    path = str(path)
    if path.endswith(".pgm"):
        return load_pgm(path).to_physical()
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
    h, w = data.shape
    return FloatField(w, h, data)
