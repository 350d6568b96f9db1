import math

import numpy as np
import pytest

from thermoshape.core import GrayImage, Rng
from thermoshape.metrics import (
    Glcm,
    HistMetric,
    UndefinedMetricError,
    aggregate_report,
    glcm,
    haralick,
    hist_distance,
    histogram,
    image_cosine_and_correlation,
    paired_test,
    psnr,
    ssim,
    stat_features,
    SimilarityRow,
)

from conftest import random_gray


def gray(levels, w=None):
    arr = np.asarray(levels, dtype=np.uint8)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    h, wid = arr.shape
    return GrayImage(wid, h, arr)


class TestHistogram:
    def test_constant(self):
        h = histogram(gray([[7, 7], [7, 7]]))
        assert h.bins[7] == 1.0
        assert h.bins.sum() == 1.0

    def test_two_values(self):
        h = histogram(gray([0, 0, 255, 255]))
        assert h.bins[0] == 0.5 and h.bins[255] == 0.5

    def test_matches_brute_force(self, rng):
        img = random_gray(rng, 13, 9)
        h = histogram(img)
        counts = [0] * 256
        for v in img.data.ravel():
            counts[v] += 1
        expected = np.array(counts) / img.data.size
        assert np.array_equal(h.bins, expected)


def one_hot(i):
    bins = np.zeros(256)
    bins[i] = 1.0
    from thermoshape.metrics import Histogram

    return Histogram(bins, normalized=True)


class TestHistDistance:
    def test_identical_identities(self, rng):
        img = random_gray(rng, 16, 16)
        h = histogram(img)
        assert hist_distance(h, h, HistMetric.BHATTACHARYYA) == pytest.approx(0, abs=1e-9)
        assert hist_distance(h, h, HistMetric.HELLINGER) == pytest.approx(0, abs=1e-7)
        assert hist_distance(h, h, HistMetric.CHI_SQUARE) == 0.0
        assert hist_distance(h, h, HistMetric.COSINE) == pytest.approx(1.0, abs=1e-12)
        assert hist_distance(h, h, HistMetric.CORRELATION) == pytest.approx(1.0, abs=1e-12)
        assert hist_distance(h, h, HistMetric.KL) == pytest.approx(0, abs=1e-7)
        assert hist_distance(h, h, HistMetric.MANHATTAN) == 0.0
        assert hist_distance(h, h, HistMetric.MINKOWSKI) == 0.0

    def test_disjoint_one_hot(self):
        a = one_hot(3)
        b = one_hot(200)
        assert hist_distance(a, b, HistMetric.MANHATTAN) == 2.0
        assert hist_distance(a, b, HistMetric.COSINE) == 0.0
        assert hist_distance(a, b, HistMetric.HELLINGER) == 1.0
        assert hist_distance(a, b, HistMetric.MINKOWSKI) == pytest.approx(
            2.0 ** (1.0 / 3.0), rel=1e-12
        )

    def test_hellinger_and_manhattan_bounds(self, rng):
        for _ in range(50):
            h1 = histogram(random_gray(rng, 8, 8))
            h2 = histogram(random_gray(rng, 8, 8))
            assert hist_distance(h1, h2, HistMetric.MANHATTAN) <= 2.0
            assert hist_distance(h1, h2, HistMetric.HELLINGER) <= 1.0

    def test_constant_histogram_correlation_error(self):
        from thermoshape.metrics import Histogram

        flat = Histogram(np.full(256, 1.0 / 256.0), normalized=True)
        with pytest.raises(UndefinedMetricError):
            hist_distance(flat, flat, HistMetric.CORRELATION)

    def test_requires_normalized(self):
        from thermoshape.metrics import Histogram

        raw = Histogram(np.zeros(256), normalized=False)
        with pytest.raises(ValueError):
            hist_distance(raw, raw, HistMetric.COSINE)


class TestStatFeatures:
    def test_hand_moments(self):
        f = stat_features(gray([0, 0, 255, 255]))
        assert f["mean"] == 127.5
        assert f["median"] == 127.5
        assert f["std"] == 127.5
        assert f["skewness"] == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_zero_skew(self):
        f = stat_features(gray([10, 20, 30, 40, 50]))
        assert f["skewness"] == pytest.approx(0.0, abs=1e-12)

    def test_normal_sample_excess_kurtosis(self):
        rng = Rng(17)
        vals = np.clip(128 + 30 * rng.fill_normal(40000), 0, 255)
        img = GrayImage(200, 200, np.floor(vals + 0.5).reshape(200, 200).astype(np.uint8))
        f = stat_features(img)
        assert abs(f["kurtosis"]) < 0.1

    def test_constant_image_error(self):
        with pytest.raises(UndefinedMetricError):
            stat_features(gray([[5, 5], [5, 5]]))

    def test_quantiles(self):
        img = gray(list(range(101)))
        f = stat_features(img)
        assert f["q05"] == pytest.approx(5.0)
        assert f["q25"] == pytest.approx(25.0)
        assert f["q75"] == pytest.approx(75.0)
        assert f["q95"] == pytest.approx(95.0)


def naive_glcm_horizontal(img, levels):
    """Independent hand-loop GLCM, horizontal offset only, symmetric."""
    q = (img.data.astype(int) * levels) // 256
    h, w = q.shape
    mat = np.zeros((levels, levels))
    for y in range(h):
        for x in range(w - 1):
            mat[q[y, x], q[y, x + 1]] += 1
            mat[q[y, x + 1], q[y, x]] += 1
    return mat / mat.sum()


class TestGlcm:
    def test_constant_image_single_diagonal(self):
        g = glcm(gray([[100, 100], [100, 100]]), levels=16)
        idx = (100 * 16) // 256
        assert g.matrix[idx, idx] == 1.0
        assert g.matrix.sum() == 1.0

    def test_checkerboard_horizontal_hand_count(self):
        img = gray([[0, 255], [255, 0]])
        mat = naive_glcm_horizontal(img, 2)
        assert mat[0, 1] == 0.5 and mat[1, 0] == 0.5

    def test_symmetric_and_normalized(self, rng):
        for _ in range(10):
            g = glcm(random_gray(rng, 9, 7), levels=16)
            assert np.abs(g.matrix - g.matrix.T).max() == 0.0
            assert g.matrix.sum() == pytest.approx(1.0, abs=1e-12)

    def test_invalid_levels(self):
        with pytest.raises(ValueError):
            glcm(gray([[0, 1], [2, 3]]), levels=13)


def naive_haralick(p):
    """Independent brute-force double-loop Haralick evaluation."""
    eps = 1e-12
    n = p.shape[0]
    px = [sum(p[i][j] for j in range(n)) for i in range(n)]
    py = [sum(p[i][j] for i in range(n)) for j in range(n)]
    mu_x = sum(i * px[i] for i in range(n))
    mu_y = sum(j * py[j] for j in range(n))
    var_x = sum((i - mu_x) ** 2 * px[i] for i in range(n))
    var_y = sum((j - mu_y) ** 2 * py[j] for j in range(n))
    p_sum = [0.0] * (2 * n - 1)
    p_diff = [0.0] * n
    for i in range(n):
        for j in range(n):
            p_sum[i + j] += p[i][j]
            p_diff[abs(i - j)] += p[i][j]
    out = {}
    out["energy"] = sum(p[i][j] ** 2 for i in range(n) for j in range(n))
    out["contrast"] = sum(k * k * p_diff[k] for k in range(n))
    out["correlation"] = (
        sum(i * j * p[i][j] for i in range(n) for j in range(n)) - mu_x * mu_y
    ) / math.sqrt(var_x * var_y)
    out["sum_of_squares_variance"] = sum(
        (i - mu_x) ** 2 * p[i][j] for i in range(n) for j in range(n)
    )
    out["homogeneity"] = sum(
        p[i][j] / (1 + (i - j) ** 2) for i in range(n) for j in range(n)
    )
    out["sum_average"] = sum(k * p_sum[k] for k in range(2 * n - 1))
    out["sum_variance"] = sum(
        (k - out["sum_average"]) ** 2 * p_sum[k] for k in range(2 * n - 1)
    )
    out["sum_entropy"] = -sum(
        p_sum[k] * math.log(p_sum[k] + eps) for k in range(2 * n - 1)
    )
    hxy = -sum(
        p[i][j] * math.log(p[i][j] + eps) for i in range(n) for j in range(n)
    )
    out["entropy"] = hxy
    dmean = sum(k * p_diff[k] for k in range(n))
    out["difference_variance"] = sum(
        (k - dmean) ** 2 * p_diff[k] for k in range(n)
    )
    out["difference_entropy"] = -sum(
        p_diff[k] * math.log(p_diff[k] + eps) for k in range(n)
    )
    hx = -sum(px[i] * math.log(px[i] + eps) for i in range(n))
    hy = -sum(py[j] * math.log(py[j] + eps) for j in range(n))
    hxy1 = -sum(
        p[i][j] * math.log(px[i] * py[j] + eps)
        for i in range(n)
        for j in range(n)
    )
    hxy2 = -sum(
        px[i] * py[j] * math.log(px[i] * py[j] + eps)
        for i in range(n)
        for j in range(n)
    )
    out["info_measure_correlation_1"] = (hxy - hxy1) / max(hx, hy)
    out["info_measure_correlation_2"] = math.sqrt(
        max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - hxy)))
    )
    return out


class TestHaralick:
    def test_constant_image_partial_features(self):
        g = glcm(gray([[9] * 4] * 4), levels=16)
        feats = haralick(g, partial=True)
        assert feats["energy"] == 1.0
        assert feats["entropy"] == pytest.approx(0.0, abs=1e-10)
        assert feats["contrast"] == 0.0
        assert feats["homogeneity"] == 1.0
        assert feats["correlation"] is None
        with pytest.raises(UndefinedMetricError):
            haralick(g)

    def test_checkerboard_hand_values(self):
        # horizontal-only 2x2 checkerboard GLCM: off-diagonals 0.5 each
        mat = np.array([[0.0, 0.5], [0.5, 0.0]])
        feats = haralick(Glcm(2, mat, ((0, 1),)))
        assert feats["energy"] == 0.5
        assert feats["contrast"] == 1.0

    def test_matches_naive_oracle(self, rng):
        for _ in range(20):
            g = glcm(random_gray(rng, 16, 16), levels=16)
            fast = haralick(g)
            slow = naive_haralick(g.matrix)
            for name, val in slow.items():
                assert fast[name] == pytest.approx(val, abs=1e-9), name


class TestSsim:
    def test_self_similarity(self, rng):
        img = random_gray(rng, 16, 16)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_vs_constant(self):
        a = gray([[0] * 12] * 12)
        b = gray([[255] * 12] * 12)
        c1 = (0.01 * 255) ** 2
        expected = c1 / (255.0**2 + c1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-9)

    def test_symmetric(self, rng):
        a = random_gray(rng, 16, 16)
        b = random_gray(rng, 16, 16)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_too_small(self):
        a = gray([[0] * 8] * 8)
        with pytest.raises(ValueError):
            ssim(a, a)

    def test_size_mismatch(self, rng):
        with pytest.raises(ValueError):
            ssim(random_gray(rng, 16, 16), random_gray(rng, 12, 16))


class TestPsnr:
    def test_identical_infinite(self, rng):
        img = random_gray(rng, 8, 8)
        assert psnr(img, img) == math.inf

    def test_one_level_offset(self):
        a = gray([[10] * 8] * 8)
        b = gray([[11] * 8] * 8)
        assert psnr(a, b) == pytest.approx(20.0 * math.log10(255.0), abs=1e-9)

    def test_monotone_in_noise_amplitude(self):
        rng = Rng(29)
        base = np.full((32, 32), 128, dtype=np.int64)
        vals = []
        for amp in (1, 2, 4, 8):
            noise = np.array(
                [rng.next_below(2 * amp + 1) - amp for _ in range(1024)]
            ).reshape(32, 32)
            noisy = np.clip(base + noise, 0, 255).astype(np.uint8)
            a = GrayImage(32, 32, base.astype(np.uint8))
            b = GrayImage(32, 32, noisy)
            vals.append(psnr(a, b))
        assert vals == sorted(vals, reverse=True)


class TestImageCosineCorrelation:
    def test_identical(self, rng):
        img = random_gray(rng, 16, 16)
        cos, corr = image_cosine_and_correlation(img, img)
        assert cos == pytest.approx(1.0, abs=1e-12)
        assert corr == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_support(self):
        a = gray([[0] * 8] * 8)
        b = gray([[200] * 8] * 8)
        cos, _ = image_cosine_and_correlation(a, b)
        assert cos == 0.0


class TestPairedTest:
    def test_equal_samples(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0]
        assert paired_test(x, x) == 1.0

    def test_all_positive_n6_exact(self):
        x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        y = [0.5, 1.5, 2.5, 3.0, 4.0, 5.0]
        assert paired_test(x, y) == pytest.approx(2.0 / 64.0, abs=1e-12)

    def test_balanced_signs(self):
        x = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        y = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0]
        assert paired_test(x, y) == 1.0

    def test_matches_exact_enumeration(self):
        # brute-force enumeration of all sign assignments
        rng = Rng(37)
        x = rng.fill_uniform(8, 0, 1)
        y = rng.fill_uniform(8, 0, 1)
        d = x - y
        absd = np.abs(d)
        order = np.argsort(absd)
        ranks = np.empty(8)
        ranks[order] = np.arange(1, 9)
        w_obs = ranks[d > 0].sum()
        total = ranks.sum()
        ws = []
        for mask in range(256):
            w = sum(ranks[i] for i in range(8) if mask >> i & 1)
            ws.append(w)
        ws = np.array(ws)
        p_low = np.mean(ws <= w_obs)
        p_high = np.mean(ws >= w_obs)
        expected = min(1.0, 2.0 * min(p_low, p_high))
        assert paired_test(x, y) == pytest.approx(expected, abs=1e-12)

    def test_needs_five_pairs(self):
        with pytest.raises(ValueError):
            paired_test([1.0] * 4, [2.0] * 4)


class TestAggregateReport:
    def test_single_row(self):
        row = SimilarityRow("p1", 0.9, 0.8, 20.0, 0.7)
        rep = aggregate_report([row])
        assert rep.median["cosine"] == 0.9
        assert rep.std["cosine"] == 0.0

    def test_three_rows_hand_values(self):
        rows = [SimilarityRow(f"p{i}", v, v, v, v) for i, v in enumerate((1.0, 2.0, 3.0))]
        rep = aggregate_report(rows)
        assert rep.median["ssim"] == 2.0
        assert rep.std["ssim"] == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-12)

    def test_infinite_psnr_excluded(self):
        rows = [
            SimilarityRow("a", 1.0, 1.0, math.inf, 1.0),
            SimilarityRow("b", 0.5, 0.5, 20.0, 0.5),
            SimilarityRow("c", 0.6, 0.6, 30.0, 0.6),
        ]
        rep = aggregate_report(rows)
        assert rep.psnr_finite_count == 2
        assert rep.median["psnr_db"] == 25.0

    def test_empty_error(self):
        with pytest.raises(ValueError):
            aggregate_report([])
