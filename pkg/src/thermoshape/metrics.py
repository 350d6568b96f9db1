"""Image-similarity battery: statistics, GLCM texture, histogram distances,
SSIM, PSNR and paired significance testing.

All histogram distances operate on normalized 256-bin histograms. Haralick
features f1-f13 are computed from a symmetric, normalized co-occurrence
matrix; f14 (maximal correlation coefficient) is deliberately excluded.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .core import GrayImage

__all__ = [
    "Histogram",
    "Glcm",
    "HistMetric",
    "UndefinedMetricError",
    "SimilarityRow",
    "SimilarityReport",
    "HARALICK_NAMES",
    "histogram",
    "hist_distance",
    "stat_features",
    "glcm",
    "haralick",
    "ssim",
    "psnr",
    "image_cosine_and_correlation",
    "paired_test",
    "aggregate_report",
]

_EPS = 1e-10
_LOG_EPS = 1e-12


class UndefinedMetricError(Exception):
    """Metric undefined for this input (e.g. constant image/histogram)."""


@dataclass(frozen=True)
class Histogram:
    bins: np.ndarray  # (256,)
    normalized: bool

    def __post_init__(self):
        arr = np.asarray(self.bins, dtype=np.float64)
        if arr.shape != (256,):
            raise ValueError("histogram must have 256 bins")
        if self.normalized and abs(arr.sum() - 1.0) > 1e-12:
            raise ValueError("normalized histogram must sum to 1")
        object.__setattr__(self, "bins", arr)


@dataclass(frozen=True)
class Glcm:
    levels: int
    matrix: np.ndarray  # (levels, levels), symmetric, sums to 1
    offsets: tuple


class HistMetric(enum.Enum):
    BHATTACHARYYA = "bhattacharyya"
    HELLINGER = "hellinger"
    CHI_SQUARE = "chi_square"
    CORRELATION = "correlation"
    COSINE = "cosine"
    KL = "kullback_leibler"
    MANHATTAN = "manhattan"
    MINKOWSKI = "minkowski"


def histogram(img: GrayImage) -> Histogram:
    """Normalized 256-bin intensity histogram."""
    counts = np.bincount(img.data.ravel(), minlength=256).astype(np.float64)
    return Histogram(counts / img.data.size, normalized=True)


def hist_distance(h1: Histogram, h2: Histogram, metric: HistMetric,
                  minkowski_order: float = 3.0) -> float:
    """Distance/similarity between two normalized histograms."""
    if not (h1.normalized and h2.normalized):
        raise ValueError("hist_distance requires normalized histograms")
    p = h1.bins
    q = h2.bins
    if metric is HistMetric.BHATTACHARYYA:
        return float(-np.log(np.sum(np.sqrt(p * q)) + _EPS))
    if metric is HistMetric.HELLINGER:
        return float(np.sqrt(max(0.0, 1.0 - np.sum(np.sqrt(p * q)))))
    if metric is HistMetric.CHI_SQUARE:
        return float(np.sum((p - q) ** 2 / (p + q + _EPS)))
    if metric is HistMetric.CORRELATION:
        dp = p - p.mean()
        dq = q - q.mean()
        np_ = np.linalg.norm(dp)
        nq_ = np.linalg.norm(dq)
        if np_ == 0.0 or nq_ == 0.0:
            raise UndefinedMetricError("constant histogram: correlation undefined")
        return float(dp @ dq / (np_ * nq_))
    if metric is HistMetric.COSINE:
        return float(p @ q / (np.linalg.norm(p) * np.linalg.norm(q)))
    if metric is HistMetric.KL:
        mask = p > 0
        return float(np.sum(p[mask] * np.log(p[mask] / (q[mask] + _EPS))))
    if metric is HistMetric.MANHATTAN:
        return float(np.sum(np.abs(p - q)))
    if metric is HistMetric.MINKOWSKI:
        return float(np.sum(np.abs(p - q) ** minkowski_order) ** (1.0 / minkowski_order))
    raise ValueError(f"unknown metric {metric!r}")


def stat_features(img: GrayImage) -> dict:
    """Population statistics of the intensity levels.

    Kurtosis is excess kurtosis (normal -> 0); quantiles use linear
    interpolation of order statistics at 5/25/75/95%.
    """
    vals = img.data.ravel().astype(np.float64)
    if vals.size < 4:
        raise ValueError("need at least 4 pixels")
    mean = vals.mean()
    std = vals.std()  # population
    if std == 0.0:
        raise UndefinedMetricError("constant image: skewness/kurtosis undefined")
    z = (vals - mean) / std
    q = np.quantile(vals, [0.05, 0.25, 0.75, 0.95])
    return {
        "mean": float(mean),
        "median": float(np.median(vals)),
        "std": float(std),
        "skewness": float(np.mean(z**3)),
        "kurtosis": float(np.mean(z**4) - 3.0),
        "q05": float(q[0]),
        "q25": float(q[1]),
        "q75": float(q[2]),
        "q95": float(q[3]),
    }


# offsets as (dy, dx) for 0, 45, 90, 135 degrees
_GLCM_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


def glcm(img: GrayImage, levels: int = 64, distance: int = 1) -> Glcm:
    """Symmetric gray-level co-occurrence matrix.

    Intensities requantized to ``levels`` by floor scaling; pairs
    accumulated in both directions over the four standard offsets at the
    given distance, then normalized to sum 1.
    """
    if levels not in (16, 32, 64, 256):
        raise ValueError("levels must be one of 16, 32, 64, 256")
    if distance < 1:
        raise ValueError("distance must be >= 1")
    h, w = img.data.shape
    if h < distance + 1 and w < distance + 1:
        raise ValueError("image smaller than distance+1 in both axes")
    q = (img.data.astype(np.int64) * levels) // 256
    mat = np.zeros((levels, levels), dtype=np.float64)
    offs = tuple((dy * distance, dx * distance) for dy, dx in _GLCM_OFFSETS)
    for dy, dx in offs:
        ys = slice(max(0, -dy), h - max(0, dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        ys2 = slice(max(0, dy), h - max(0, -dy))
        xs2 = slice(max(0, dx), w - max(0, -dx))
        a = q[ys, xs].ravel()
        b = q[ys2, xs2].ravel()
        if a.size == 0:
            continue
        np.add.at(mat, (a, b), 1.0)
        np.add.at(mat, (b, a), 1.0)
    total = mat.sum()
    if total == 0:
        raise ValueError("no valid pixel pairs at this distance")
    return Glcm(levels, mat / total, offs)


HARALICK_NAMES = (
    "energy",
    "contrast",
    "correlation",
    "sum_of_squares_variance",
    "homogeneity",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_measure_correlation_1",
    "info_measure_correlation_2",
)


def haralick(g: Glcm, partial: bool = False) -> dict:
    """Haralick texture features f1-f13 of a normalized GLCM.

    A GLCM with zero marginal variance (constant image) has no defined
    correlation: by default that raises; with ``partial=True`` the other
    twelve features are returned and correlation is None.
    """
    p = g.matrix
    n = g.levels
    i = np.arange(n, dtype=np.float64)
    ii, jj = np.meshgrid(i, i, indexing="ij")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mu_x = float(i @ px)
    mu_y = float(i @ py)
    var_x = float(((i - mu_x) ** 2) @ px)
    var_y = float(((i - mu_y) ** 2) @ py)

    # distributions of i+j and |i-j|
    p_sum = np.zeros(2 * n - 1)
    np.add.at(p_sum, (ii + jj).astype(np.int64).ravel(), p.ravel())
    p_diff = np.zeros(n)
    np.add.at(p_diff, np.abs(ii - jj).astype(np.int64).ravel(), p.ravel())
    ks = np.arange(2 * n - 1, dtype=np.float64)
    kd = np.arange(n, dtype=np.float64)

    energy = float(np.sum(p * p))
    contrast = float(kd**2 @ p_diff)
    if var_x <= 0.0 or var_y <= 0.0:
        correlation = None
    else:
        correlation = float(
            (np.sum(ii * jj * p) - mu_x * mu_y) / math.sqrt(var_x * var_y)
        )
    sum_of_squares = float(np.sum((ii - mu_x) ** 2 * p))
    homogeneity = float(np.sum(p / (1.0 + (ii - jj) ** 2)))
    sum_average = float(ks @ p_sum)
    sum_variance = float((ks - sum_average) ** 2 @ p_sum)
    sum_entropy = float(-np.sum(p_sum * np.log(p_sum + _LOG_EPS)))
    entropy = float(-np.sum(p * np.log(p + _LOG_EPS)))
    diff_mean = float(kd @ p_diff)
    difference_variance = float((kd - diff_mean) ** 2 @ p_diff)
    difference_entropy = float(-np.sum(p_diff * np.log(p_diff + _LOG_EPS)))

    hx = float(-np.sum(px * np.log(px + _LOG_EPS)))
    hy = float(-np.sum(py * np.log(py + _LOG_EPS)))
    pxpy = np.outer(px, py)
    hxy1 = float(-np.sum(p * np.log(pxpy + _LOG_EPS)))
    hxy2 = float(-np.sum(pxpy * np.log(pxpy + _LOG_EPS)))
    denom = max(hx, hy)
    imc1 = (entropy - hxy1) / denom if denom > 0 else 0.0
    imc2 = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - entropy))))

    feats = {
        "energy": energy,
        "contrast": contrast,
        "correlation": correlation,
        "sum_of_squares_variance": sum_of_squares,
        "homogeneity": homogeneity,
        "sum_average": sum_average,
        "sum_variance": sum_variance,
        "sum_entropy": sum_entropy,
        "entropy": entropy,
        "difference_variance": difference_variance,
        "difference_entropy": difference_entropy,
        "info_measure_correlation_1": imc1,
        "info_measure_correlation_2": imc2,
    }
    if correlation is None and not partial:
        raise UndefinedMetricError(
            "degenerate GLCM: zero marginal variance, correlation undefined"
        )
    return feats


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: GrayImage, b: GrayImage) -> float:
    """Mean structural similarity, 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, L=255, valid-region convolution."""
    if a.data.shape != b.data.shape:
        raise ValueError("images must have the same size")
    if min(a.data.shape) < 11:
        raise ValueError("image smaller than the 11x11 SSIM window")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    win = _gaussian_window()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid") - mu_x**2
    yy = convolve2d(y * y, win, mode="valid") - mu_y**2
    xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def psnr(a: GrayImage, b: GrayImage) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    if a.data.shape != b.data.shape:
        raise ValueError("images must have the same size")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(255.0**2 / mse))


def image_cosine_and_correlation(a: GrayImage, b: GrayImage):
    """Histogram cosine similarity and Pearson correlation of two images."""
    if a.data.shape != b.data.shape:
        raise ValueError("images must have the same size")
    ha = histogram(a)
    hb = histogram(b)
    return (
        hist_distance(ha, hb, HistMetric.COSINE),
        hist_distance(ha, hb, HistMetric.CORRELATION),
    )


def paired_test(x, y) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped; ties get mid-ranks. For n <= 25 the null
    distribution of the positive-rank sum is computed exactly (all 2^n sign
    assignments via dynamic programming over doubled ranks); larger n use
    the normal approximation with tie correction. All-zero differences
    return p = 1 by convention.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D with equal length")
    if len(x) < 5:
        raise ValueError("need at least 5 pairs")
    d = x - y
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    absd = np.abs(d)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n)
    sorted_abs = absd[order]
    i = 0
    pos = 1
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = (pos + (pos + (j - i))) / 2.0
        pos += j - i + 1
        i = j + 1
    w_plus = float(np.sum(ranks[d > 0]))
    if n <= 25:
        # exact null: DP over attainable sums of doubled ranks
        r2 = np.rint(2.0 * ranks).astype(np.int64)
        total = int(r2.sum())
        counts = np.zeros(total + 1)
        counts[0] = 1.0
        for r in r2:
            counts[r:] += counts[: total + 1 - r]
        counts /= counts.sum()
        w2 = int(round(2.0 * w_plus))
        p_low = float(counts[: w2 + 1].sum())
        p_high = float(counts[w2:].sum())
        return min(1.0, 2.0 * min(p_low, p_high))
    mean = n * (n + 1) / 4.0
    # variance with mid-rank tie correction
    var = float(np.sum(ranks**2)) / 4.0
    if var == 0.0:
        return 1.0
    z = (w_plus - mean) / math.sqrt(var)
    return float(math.erfc(abs(z) / math.sqrt(2.0)))


@dataclass(frozen=True)
class SimilarityRow:
    part_id: str
    cosine: float
    correlation: float
    psnr_db: float
    ssim: float


@dataclass(frozen=True)
class SimilarityReport:
    rows: list
    median: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    psnr_finite_count: int = 0

    @property
    def n_parts(self) -> int:
        return len(self.rows)


def _median_linear(vals: np.ndarray) -> float:
    """Median with linear interpolation of the two middle order stats."""
    return float(np.median(vals))


def aggregate_report(rows) -> SimilarityReport:
    """Per-column median and population std over per-part rows.

    Rows with +inf PSNR are excluded from the PSNR aggregates; the count of
    finite-PSNR rows is recorded so the exclusion is visible.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("aggregate_report requires at least one row")
    cols = {
        "cosine": np.array([r.cosine for r in rows]),
        "correlation": np.array([r.correlation for r in rows]),
        "psnr_db": np.array([r.psnr_db for r in rows]),
        "ssim": np.array([r.ssim for r in rows]),
    }
    finite_psnr = cols["psnr_db"][np.isfinite(cols["psnr_db"])]
    median = {}
    std = {}
    for name, vals in cols.items():
        if name == "psnr_db":
            vals = finite_psnr
        if len(vals) == 0:
            median[name] = math.nan
            std[name] = math.nan
        else:
            median[name] = _median_linear(vals)
            std[name] = float(np.std(vals))
    return SimilarityReport(rows, median, std, int(len(finite_psnr)))
