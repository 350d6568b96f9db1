"""Shared image/grid types, deterministic RNG and PGM file I/O.

Everything downstream trades in two currencies: ``GrayImage`` (8-bit levels
plus the physical scale/offset that maps levels back to microns or degrees)
and ``FloatField`` (pre-quantization real-valued grids).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GrayImage",
    "FloatField",
    "Rng",
    "PgmError",
    "MalformedHeaderError",
    "UnsupportedMaxvalError",
    "TruncatedPayloadError",
    "load_pgm",
    "save_pgm",
]


class PgmError(Exception):
    """Base class for PGM file problems."""


class MalformedHeaderError(PgmError):
    """Header is not a valid binary (P5) PGM header."""


class UnsupportedMaxvalError(PgmError):
    """Only maxval 255 (single-byte samples) is supported."""


class TruncatedPayloadError(PgmError):
    """Pixel payload is shorter than width*height bytes."""


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image with physical-scale metadata.

    The physical value of a pixel at level ``p`` is ``offset + scale * p``.
    ``scale`` is in physical units per level (e.g. 0.902 °C or 1.57 µm).
    """

    width: int
    height: int
    data: np.ndarray  # uint8, shape (height, width)
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.uint8).reshape(
            self.height, self.width
        )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def to_physical(self) -> "FloatField":
        """Return the image as a real-valued field in physical units."""
        vals = self.offset + self.scale * self.data.astype(np.float64)
        return FloatField(self.width, self.height, vals)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.scale == other.scale
            and self.offset == other.offset
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class FloatField:
    """Real-valued grid in physical units (row-major, finite values)."""

    width: int
    height: int
    data: np.ndarray = field(repr=False)  # float64, shape (height, width)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64).reshape(
            self.height, self.width
        )
        if not np.all(np.isfinite(arr)):
            raise ValueError("FloatField values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)


_U64 = (1 << 64) - 1


def _splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & _U64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return x, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _U64


class Rng:
    """xoshiro256++ pseudo-random generator, seeded via splitmix64.

    The same 64-bit seed always yields the same stream, independent of
    platform. Single-owner: not safe to share across threads.
    """

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int):
        self.seed = seed & _U64
        x = self.seed
        s = []
        for _ in range(4):
            x, v = _splitmix64(x)
            s.append(v)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[0] + s[3]) & _U64, 23) + s[0]) & _U64
        t = (s[1] << 17) & _U64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_f64(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_f64()

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _U64 + 1 - ((_U64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def normal(self) -> float:
        """Standard normal deviate (Box-Muller, both draws consumed)."""
        u1 = self.next_f64()
        while u1 == 0.0:
            u1 = self.next_f64()
        u2 = self.next_f64()
        return float(np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2))

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def fill_uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return np.array([self.uniform(lo, hi) for _ in range(n)], dtype=np.float64)

    def fill_normal(self, n: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(n)], dtype=np.float64)

    def derive(self, stream: int) -> "Rng":
        """Child generator with a seed derived from (seed, stream)."""
        _, mixed = _splitmix64((self.seed ^ (stream * 0x9E3779B97F4A7C15)) & _U64)
        return Rng(mixed)


_FLOAT_RE = r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?"
_META_RE = re.compile(rf"^#\s*scale=({_FLOAT_RE})\s+offset=({_FLOAT_RE})\s*$")


def _fmt(x: float) -> str:
    """Shortest exact decimal for a float; integers without trailing zeros."""
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def save_pgm(img: GrayImage, path) -> None:
    """Write a binary (P5) PGM with a metadata comment carrying scale/offset.

    Output bytes are a pure function of the image, so identical images
    produce identical files.
    """
    header = (
        f"P5\n# scale={_fmt(img.scale)} offset={_fmt(img.offset)}\n"
        f"{img.width} {img.height}\n255\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(img.data.tobytes())


def load_pgm(path) -> GrayImage:
    """Read a binary (P5) PGM with maxval 255.

    A comment line ``# scale=<f> offset=<f>`` restores physical metadata;
    otherwise scale=1, offset=0.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise MalformedHeaderError(f"{path}: not a binary PGM (missing P5 magic)")
    scale, offset = 1.0, 0.0
    tokens = []
    pos = 2
    n = len(raw)
    while len(tokens) < 3:
        # skip whitespace and comment lines between header tokens
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeaderError(f"{path}: header ended prematurely")
        if raw[pos : pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise MalformedHeaderError(f"{path}: unterminated comment")
            try:
                comment = raw[pos:end].decode("ascii")
            except UnicodeDecodeError:
                comment = ""
            m = _META_RE.match(comment)
            if m:
                scale, offset = float(m.group(1)), float(m.group(2))
            pos = end + 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise MalformedHeaderError(f"{path}: non-numeric header field") from None
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"{path}: non-positive dimensions")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"{path}: unsupported maxval {maxval}")
    # exactly one whitespace byte separates maxval from the payload
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise MalformedHeaderError(f"{path}: missing separator before payload")
    pos += 1
    payload = raw[pos : pos + width * height]
    if len(payload) < width * height:
        raise TruncatedPayloadError(
            f"{path}: expected {width * height} pixel bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(width, height, data, scale=scale, offset=offset)
