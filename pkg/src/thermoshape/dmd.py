"""Modal decomposition of height maps on a plane reference geometry.

The descriptor space is built from the natural bending modes of a free-free
beam discretized with second differences: the 2-D basis vectors are tensor
products of 1-D beam modes, ordered by the sum of the 1-D stiffness
eigenvalues. The leading modes are the rigid-body descriptors of a plane
(piston, two tilts) followed by twist and bending shapes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import FloatField, GrayImage

__all__ = [
    "BeamModes1D",
    "ModalBasis",
    "ModalSpectrum",
    "SpectrumSimilarity",
    "UndefinedSimilarityError",
    "beam_modes_1d",
    "build_basis",
    "project",
    "reconstruct",
    "residual_rms",
    "spectrum_similarity",
    "per_mode_error",
    "save_basis",
    "load_basis",
    "save_spectrum_csv",
    "load_spectrum_csv",
]

BASIS_MAGIC = b"DMDB"
BASIS_VERSION = 1


class UndefinedSimilarityError(Exception):
    """Similarity is undefined (zero-norm or constant spectrum)."""


@dataclass(frozen=True)
class BeamModes1D:
    """Orthonormal free-free beam bending modes on n grid points."""

    n: int
    count: int
    vectors: np.ndarray  # (count, n), rows orthonormal
    eigvals: np.ndarray  # (count,), non-negative ascending


@dataclass(frozen=True)
class ModalBasis:
    """Orthonormal 2-D mode set over an h x w grid.

    ``modes[k]`` is a flattened (h*w,) unit vector; ``eigvals[k]`` is the
    tensor-product stiffness surrogate (sum of the two 1-D eigenvalues).
    """

    h: int
    w: int
    K: int
    modes: np.ndarray  # (K, h*w)
    eigvals: np.ndarray  # (K,)

    def mode_image(self, k: int) -> np.ndarray:
        return self.modes[k].reshape(self.h, self.w)


@dataclass(frozen=True)
class ModalSpectrum:
    """Signed modal coefficients of one surface, in physical units."""

    coeffs: np.ndarray

    @property
    def K(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class SpectrumSimilarity:
    cosine: float
    r_squared: float


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """Make the first non-negligible entry positive."""
    nz = np.nonzero(np.abs(v) > 1e-12 * np.abs(v).max())[0]
    if len(nz) and v[nz[0]] < 0:
        return -v
    return v


def beam_modes_1d(n: int, count: int) -> BeamModes1D:
    """Eigenmodes of the free-free Euler-Bernoulli bending operator.

    The operator is D2^T D2 where D2 maps n points to the n-2 interior
    second differences (unit spacing, unit mass). Its null space holds the
    two rigid-body modes (translation, rotation); higher modes approximate
    the continuous free-free bending shapes with eigenvalues near
    (x_k / (n-1))^4 for the roots of cos(x) cosh(x) = 1.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    if not (2 <= count <= n):
        raise ValueError("count must be in [2, n]")
    d2 = np.zeros((n - 2, n))
    idx = np.arange(n - 2)
    d2[idx, idx] = 1.0
    d2[idx, idx + 1] = -2.0
    d2[idx, idx + 2] = 1.0
    op = d2.T @ d2
    eigvals, eigvecs = np.linalg.eigh(op)
    # flush numerical noise in the rigid-body eigenvalues to exactly zero
    eigvals = np.where(eigvals < 1e-10 * eigvals[-1], 0.0, eigvals)
    order = np.argsort(eigvals, kind="stable")[:count]
    vecs = np.empty((count, n))
    for i, j in enumerate(order):
        vecs[i] = _fix_sign(eigvecs[:, j])
    # the solver returns an arbitrary rotation of the rigid-body null space;
    # pin it to the canonical translation and rotation shapes
    vecs[0] = np.full(n, 1.0 / np.sqrt(n))
    ramp = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    vecs[1] = ramp / np.linalg.norm(ramp)
    return BeamModes1D(n, count, vecs, eigvals[order].copy())


def build_basis(h: int, w: int, K: int) -> ModalBasis:
    """Tensor-product plane basis: K modes ranked by combined stiffness.

    Mode (i, j) is the outer product of y-beam mode i and x-beam mode j
    with eigenvalue lam_y[i] + lam_x[j]; ties are broken by (i, j)
    lexicographic so the leading modes come out as piston, tilt along x,
    tilt along y, twist.
    """
    if K > h * w:
        raise ValueError("K cannot exceed h*w")
    if K < 1:
        raise ValueError("K must be positive")
    cy = min(h, K)
    cx = min(w, K)
    by = beam_modes_1d(h, cy) if h >= 8 else None
    bx = beam_modes_1d(w, cx) if w >= 8 else None
    if by is None or bx is None:
        raise ValueError("grid must be at least 8x8")
    pairs = sorted(
        ((by.eigvals[i] + bx.eigvals[j], i, j) for i in range(cy) for j in range(cx)),
    )[:K]
    modes = np.empty((K, h * w))
    eigvals = np.empty(K)
    for k, (lam, i, j) in enumerate(pairs):
        modes[k] = np.outer(by.vectors[i], bx.vectors[j]).ravel()
        eigvals[k] = lam
    return ModalBasis(h, w, K, modes, eigvals)


def _surface_vector(surface, basis: ModalBasis) -> np.ndarray:
    if isinstance(surface, GrayImage):
        surface = surface.to_physical()
    if isinstance(surface, FloatField):
        if surface.height != basis.h or surface.width != basis.w:
            raise ValueError(
                f"surface {surface.height}x{surface.width} does not match "
                f"basis grid {basis.h}x{basis.w}"
            )
        return surface.data.ravel()
    arr = np.asarray(surface, dtype=np.float64)
    if arr.shape != (basis.h, basis.w):
        raise ValueError("surface shape does not match basis grid")
    return arr.ravel()


def project(surface, basis: ModalBasis) -> ModalSpectrum:
    """Modal coefficients of a surface (physical units).

    Equals the least-squares fit because the basis is orthonormal.
    """
    vec = _surface_vector(surface, basis)
    return ModalSpectrum(basis.modes @ vec)


def reconstruct(spec: ModalSpectrum, basis: ModalBasis) -> FloatField:
    """Surface synthesized from modal coefficients."""
    if spec.K != basis.K:
        raise ValueError(f"spectrum length {spec.K} != basis K {basis.K}")
    vals = basis.modes.T @ spec.coeffs
    return FloatField(basis.w, basis.h, vals.reshape(basis.h, basis.w))


def residual_rms(surface, basis: ModalBasis) -> float:
    """RMS of what the truncated basis cannot represent."""
    vec = _surface_vector(surface, basis)
    approx = basis.modes.T @ (basis.modes @ vec)
    return float(np.sqrt(np.mean((vec - approx) ** 2)))


def spectrum_similarity(a: ModalSpectrum, b: ModalSpectrum) -> SpectrumSimilarity:
    """Cosine similarity and squared Pearson correlation of two spectra."""
    if a.K != b.K:
        raise ValueError("spectra must have equal length")
    if a.K < 3:
        raise ValueError("need at least 3 modes")
    pa = np.asarray(a.coeffs, dtype=np.float64)
    pb = np.asarray(b.coeffs, dtype=np.float64)
    na = np.linalg.norm(pa)
    nb = np.linalg.norm(pb)
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("zero-norm spectrum")
    da = pa - pa.mean()
    db = pb - pb.mean()
    sa = np.linalg.norm(da)
    sb = np.linalg.norm(db)
    if sa == 0.0 or sb == 0.0:
        raise UndefinedSimilarityError("constant spectrum: correlation undefined")
    cosine = float(pa @ pb / (na * nb))
    r = float(da @ db / (sa * sb))
    return SpectrumSimilarity(cosine, r * r)


def per_mode_error(a: ModalSpectrum, b: ModalSpectrum) -> np.ndarray:
    """Elementwise |a_k - b_k|."""
    if a.K != b.K:
        raise ValueError("spectra must have equal length")
    return np.abs(np.asarray(a.coeffs) - np.asarray(b.coeffs))


def save_basis(basis: ModalBasis, path) -> None:
    """Serialize a basis: magic, version, dims, eigvals, then modes
    column-major (each mode vector contiguous), all little-endian f64."""
    with open(path, "wb") as f:
        f.write(BASIS_MAGIC)
        f.write(struct.pack("<IIII", BASIS_VERSION, basis.h, basis.w, basis.K))
        f.write(basis.eigvals.astype("<f8").tobytes())
        f.write(basis.modes.astype("<f8").tobytes())


def load_basis(path) -> ModalBasis:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != BASIS_MAGIC:
        raise ValueError(f"{path}: not a basis cache file")
    version, h, w, K = struct.unpack_from("<IIII", raw, 4)
    if version != BASIS_VERSION:
        raise ValueError(f"{path}: unsupported basis file version {version}")
    off = 20
    eigvals = np.frombuffer(raw, dtype="<f8", count=K, offset=off).copy()
    off += 8 * K
    modes = np.frombuffer(raw, dtype="<f8", count=K * h * w, offset=off)
    return ModalBasis(h, w, K, modes.reshape(K, h * w).copy(), eigvals)


def save_spectrum_csv(spec: ModalSpectrum, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("mode_index,coefficient\n")
        for k, c in enumerate(spec.coeffs):
            f.write(f"{k},{float(c)!r}\n")


def load_spectrum_csv(path) -> ModalSpectrum:
    coeffs = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "mode_index,coefficient":
            raise ValueError(f"{path}: unexpected spectrum CSV header")
        for line in f:
            line = line.strip()
            if not line:
                continue
            _, c = line.split(",")
            coeffs.append(float(c))
    return ModalSpectrum(np.array(coeffs))
