"""
Image quality metrics on 8-bit-scaled greyscale images: SSIM, MSE, PSNR and
histogram correlation, plus boxplot-style corpus summaries and the eval CSV.
"""

import csv
import dataclasses
import io
import logging
import math
from typing import Dict, List, Sequence

import numpy as np
from scipy import signal

from ntg.errors import ShapeMismatchError, UsageError
from ntg.formats import atomic_write_bytes

logger = logging.getLogger(__name__)

MAX_VALUE = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * MAX_VALUE) ** 2
C2 = (0.03 * MAX_VALUE) ** 2
HIST_BINS = 256
METRICS = ("ssim", "mse", "psnr", "histcorr")


def to_8bit(image: np.ndarray) -> np.ndarray:
    """Internal [0, 1] values → the exported 8-bit scale, as floats."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * MAX_VALUE)


def _plane(image, what: str) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ShapeMismatchError(f"{what} must be single-channel", arr.shape, (1,) + arr.shape[1:])
        arr = arr[0]
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{what} must be a 2-D image", arr.shape, ("H", "W"))
    return arr


def _pair(x, y):
    x, y = _plane(x, "first image"), _plane(y, "second image")
    if x.shape != y.shape:
        raise ShapeMismatchError("metric inputs", x.shape, y.shape)
    return x, y


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(x, y) -> float:
    """Mean SSIM over all valid window positions.

    Images smaller than the window use the largest odd window that fits.
    """
    x, y = _pair(x, y)
    size = min(SSIM_WINDOW, *x.shape)
    size -= 1 - size % 2
    window = gaussian_window(size)

    def filt(img):
        return signal.correlate2d(img, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sigma_x = filt(x * x) - mu_x * mu_x
    sigma_y = filt(y * y) - mu_y * mu_y
    sigma_xy = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + C1) * (2.0 * sigma_xy + C2)
    den = (mu_x * mu_x + mu_y * mu_y + C1) * (sigma_x + sigma_y + C2)
    return float(np.mean(num / den))


def mse(g, t) -> float:
    g, t = _pair(g, t)
    return float(np.mean((g - t) ** 2))


def psnr(g, t, max_f: float = MAX_VALUE) -> float:
    """20·log10(max_f / √MSE); ``math.inf`` for identical images."""
    err = mse(g, t)
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(max_f / math.sqrt(err))


def intensity_histogram(image, bins: int = HIST_BINS) -> np.ndarray:
    """Counts per unit-width bin over [0, bins]; the last bin is closed."""
    counts, _ = np.histogram(np.asarray(image, dtype=np.float64).ravel(), bins=bins, range=(0.0, float(bins)))
    return counts.astype(np.float64)


def histogram_correlation(a, b, bins: int = HIST_BINS) -> float:
    ha, hb = intensity_histogram(a, bins), intensity_histogram(b, bins)
    da, db = ha - ha.mean(), hb - hb.mean()
    norm = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if norm == 0.0:
        return 1.0 if np.array_equal(ha, hb) else 0.0
    return float(np.dot(da, db)) / norm


# ============================================================
# Reports
# ============================================================

@dataclasses.dataclass(frozen=True)
class MetricRow:
    id: str
    ssim: float
    mse: float
    psnr: float
    histcorr: float


@dataclasses.dataclass(frozen=True)
class Summary:
    mean: float
    median: float
    q1: float
    q3: float
    outliers: tuple


@dataclasses.dataclass
class MetricReport:
    rows: List[MetricRow]
    summary: Dict[str, Summary]


def evaluate_pair(image_id: str, output, target) -> MetricRow:
    """Metrics for one output/target pair given in internal [0, 1] scale."""
    g, t = to_8bit(output), to_8bit(target)
    return MetricRow(image_id, ssim(g, t), mse(g, t), psnr(g, t), histogram_correlation(g, t))


def summarize(values: Sequence[float]) -> Summary:
    """Mean, median, linear-interpolated quartiles and 1.5·IQR outliers.

    Infinite entries (PSNR of identical images) are left out.
    """
    finite = np.array([v for v in values if math.isfinite(v)], dtype=np.float64)
    if finite.size == 0:
        raise UsageError("cannot summarise an empty set of values")
    q1, median, q3 = np.percentile(finite, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    low, high = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = tuple(float(v) for v in sorted(finite) if v < low or v > high)
    return Summary(float(finite.mean()), float(median), float(q1), float(q3), outliers)


def build_report(rows: Sequence[MetricRow]) -> MetricReport:
    if not rows:
        raise UsageError("no image pairs to evaluate")
    summary = {}
    for name in METRICS:
        values = [getattr(r, name) for r in rows]
        if any(math.isfinite(v) for v in values):
            summary[name] = summarize(values)
    return MetricReport(list(rows), summary)


# ============================================================
# CSV
# ============================================================

def fmt(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".9g")


def row_fields(row: MetricRow) -> list:
    return [row.id] + [fmt(getattr(row, name)) for name in METRICS]


def csv_text(rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def report_csv(report: MetricReport) -> str:
    lines = [["id", *METRICS]] + [row_fields(r) for r in report.rows]
    text = csv_text(lines)
    summary = [["metric", "mean", "median", "q1", "q3", "outliers"]]
    for name, s in report.summary.items():
        summary.append([name, fmt(s.mean), fmt(s.median), fmt(s.q1), fmt(s.q3), ";".join(fmt(v) for v in s.outliers)])
    return text + "# summary\n" + csv_text(summary)


def write_report(report: MetricReport, path) -> None:
    atomic_write_bytes(path, report_csv(report).encode("utf-8"))
    logger.info("Wrote metrics for %d images to %s", len(report.rows), path)


def histogram_csv(images: Dict[str, np.ndarray]) -> str:
    """Long-format 256-bin histograms of 8-bit-scaled images: id,bin,count."""
    lines = [["id", "bin", "count"]]
    for image_id in sorted(images):
        counts = intensity_histogram(to_8bit(images[image_id]))
        lines.extend([image_id, str(k), str(int(c))] for k, c in enumerate(counts))
    return csv_text(lines)
