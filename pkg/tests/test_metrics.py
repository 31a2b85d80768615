import math

import numpy as np
import pytest

from ntg import metrics
from ntg.errors import ShapeMismatchError, UsageError


def pearson(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    return float(np.sum(da * db) / math.sqrt(np.sum(da * da) * np.sum(db * db)))


class TestSsim:
    def test_identical_images(self, rng):
        x = rng.integers(0, 256, size=(20, 24)).astype(np.float64)
        assert metrics.ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images_closed_form(self):
        c1 = (0.01 * 255) ** 2
        value = metrics.ssim(np.zeros((16, 16)), np.full((16, 16), 255.0))
        assert value == pytest.approx(c1 / (255 ** 2 + c1), abs=1e-8)

    def test_symmetric(self, rng):
        x, y = rng.integers(0, 256, size=(2, 16, 16)).astype(np.float64)
        assert metrics.ssim(x, y) == pytest.approx(metrics.ssim(y, x), abs=1e-12)

    def test_bounded(self, rng):
        x, y = rng.integers(0, 256, size=(2, 16, 16)).astype(np.float64)
        assert -1.0 <= metrics.ssim(x, y) <= 1.0

    def test_small_images_shrink_window(self, rng):
        x = rng.integers(0, 256, size=(6, 9)).astype(np.float64)
        assert metrics.ssim(x, x) == pytest.approx(1.0)

    def test_accepts_channel_axis(self, rng):
        x = rng.integers(0, 256, size=(1, 12, 12)).astype(np.float64)
        assert metrics.ssim(x, x[0]) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            metrics.ssim(np.zeros((12, 12)), np.zeros((12, 13)))

    def test_multichannel_rejected(self):
        with pytest.raises(ShapeMismatchError):
            metrics.ssim(np.zeros((3, 12, 12)), np.zeros((3, 12, 12)))

    def test_window_normalised(self):
        window = metrics.gaussian_window()
        assert window.shape == (11, 11)
        assert window.sum() == pytest.approx(1.0)


class TestMseAndPsnr:
    def test_identical(self, rng):
        x = rng.uniform(0, 255, size=(4, 4))
        assert metrics.mse(x, x) == 0.0
        assert metrics.psnr(x, x) == math.inf

    def test_unit_offset(self):
        assert metrics.mse(np.zeros((2, 2)), np.ones((2, 2))) == 1.0

    def test_single_error(self):
        assert metrics.mse([[1, 2], [3, 4]], [[1, 2], [3, 0]]) == 4.0

    def test_psnr_unit_ratio(self):
        assert metrics.psnr(np.zeros((2, 2)), np.full((2, 2), 255.0)) == pytest.approx(0.0, abs=1e-12)

    def test_psnr_unit_mse(self):
        assert metrics.psnr(np.zeros((2, 2)), np.ones((2, 2))) == pytest.approx(48.1308, abs=1e-3)

    def test_psnr_decreases_with_mse(self):
        values = [metrics.psnr(np.zeros((2, 2)), np.full((2, 2), d)) for d in (1.0, 2.0, 5.0, 40.0)]
        assert values == sorted(values, reverse=True)

    def test_pointwise_metrics_ignore_shared_permutation(self, rng):
        g, t = rng.integers(0, 256, size=(2, 8, 8)).astype(np.float64)
        perm = rng.permutation(64)
        gp, tp = g.ravel()[perm].reshape(8, 8), t.ravel()[perm].reshape(8, 8)
        assert metrics.mse(gp, tp) == pytest.approx(metrics.mse(g, t))
        assert metrics.histogram_correlation(gp, tp) == pytest.approx(metrics.histogram_correlation(g, t))


class TestHistogramCorrelation:
    def test_identical(self, rng):
        x = rng.integers(0, 256, size=(16, 16)).astype(np.float64)
        assert metrics.histogram_correlation(x, x) == 1.0

    def test_matches_pearson_oracle(self, rng):
        a, b = rng.integers(0, 256, size=(2, 32, 32)).astype(np.float64)
        expected = pearson(metrics.intensity_histogram(a), metrics.intensity_histogram(b))
        assert metrics.histogram_correlation(a, b) == pytest.approx(expected, abs=1e-12)

    def test_affine_count_transform(self, rng):
        a = rng.integers(0, 128, size=(16, 16)).astype(np.float64)
        # every count doubles, zero bins stay zero
        b = np.concatenate([a, a], axis=0)
        assert metrics.histogram_correlation(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_last_bin_closed(self):
        counts = metrics.intensity_histogram(np.array([0.0, 254.5, 255.0]))
        assert counts[0] == 1
        assert counts[254] == 1
        assert counts[255] == 1

    def test_zero_variance_histograms(self):
        flat = np.arange(256, dtype=np.float64)
        assert metrics.histogram_correlation(flat, flat) == 1.0
        assert metrics.histogram_correlation(flat, 2 * flat[:128]) == 0.0


class TestSummary:
    def test_single_value(self):
        s = metrics.summarize([3.5])
        assert (s.mean, s.median, s.q1, s.q3, s.outliers) == (3.5, 3.5, 3.5, 3.5, ())

    def test_hand_evaluated_quartiles(self):
        s = metrics.summarize([1, 2, 3, 4, 100])
        assert s.mean == 22.0
        assert s.median == 3.0
        assert (s.q1, s.q3) == (2.0, 4.0)
        assert s.outliers == (100.0,)

    def test_even_count_median_is_midpoint(self):
        assert metrics.summarize([1, 2, 3, 10]).median == 2.5

    def test_order_invariant(self, rng):
        values = list(rng.standard_normal(11))
        a, b = metrics.summarize(values), metrics.summarize(list(reversed(values)))
        assert a.mean == pytest.approx(b.mean, abs=1e-15)
        assert (a.median, a.q1, a.q3, a.outliers) == (b.median, b.q1, b.q3, b.outliers)

    def test_infinite_values_skipped(self):
        assert metrics.summarize([math.inf, 2.0, 4.0]).mean == 3.0

    def test_empty_rejected(self):
        with pytest.raises(UsageError):
            metrics.summarize([])
        with pytest.raises(UsageError):
            metrics.summarize([math.inf])


class TestReportCsv:
    def test_evaluate_pair_scales_to_8bit(self):
        row = metrics.evaluate_pair("a", np.zeros((1, 2, 2)), np.full((1, 2, 2), 1 / 255))
        assert row.mse == 1.0
        assert row.psnr == pytest.approx(48.1308, abs=1e-3)

    def test_layout(self, rng):
        target = rng.uniform(size=(1, 12, 12))
        rows = [metrics.evaluate_pair("same", target, target), metrics.evaluate_pair("other", 1 - target, target)]
        text = metrics.report_csv(metrics.build_report(rows))
        lines = text.split("\n")
        assert lines[0] == "id,ssim,mse,psnr,histcorr"
        assert lines[1].startswith("same,1,0,inf,")
        assert lines[3] == "# summary"
        assert lines[4] == "metric,mean,median,q1,q3,outliers"
        assert [line.split(",")[0] for line in lines[5:9]] == ["ssim", "mse", "psnr", "histcorr"]
        assert text.endswith("\n")
        assert "\r" not in text

    def test_nine_significant_digits(self):
        assert metrics.fmt(1 / 3) == "0.333333333"
        assert metrics.fmt(math.inf) == "inf"

    def test_write_report(self, tmp_path, rng):
        target = rng.uniform(size=(1, 12, 12))
        report = metrics.build_report([metrics.evaluate_pair("x", target, target)])
        path = tmp_path / "eval.csv"
        metrics.write_report(report, path)
        assert path.read_text(encoding="utf-8") == metrics.report_csv(report)

    def test_empty_report_rejected(self):
        with pytest.raises(UsageError):
            metrics.build_report([])

    def test_histogram_csv(self):
        text = metrics.histogram_csv({"b": np.zeros((1, 2, 2)), "a": np.ones((1, 2, 2))})
        lines = text.strip().split("\n")
        assert lines[0] == "id,bin,count"
        assert len(lines) == 1 + 2 * 256
        assert lines[1] == "a,0,0"
        assert lines[256] == "a,255,4"
        assert lines[257] == "b,0,4"
