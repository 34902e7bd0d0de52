"""
Evaluation Service
Y-channel PSNR / SSIM and dataset-level metric reports
"""
import math
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.signal import convolve2d

from rzsr.core.error_handlers import CommonErrors, DegenerateInputError, ShapeError
from rzsr.core.logging_config import LoggerMixin, get_logger
from rzsr.models.dto import MetricReport, MetricRow
from rzsr.utils.helpers import list_images
from rzsr.utils.image_io import read_image
from rzsr.utils.image_ops import check_image, luminance

logger = get_logger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _y_planes(a: np.ndarray, b: np.ndarray, shave: int):
    a = check_image(a, "first image")
    b = check_image(b, "second image")
    if a.shape != b.shape:
        raise ShapeError(
            f"Metric inputs differ in shape: {a.shape} vs {b.shape}",
            details={"first": list(a.shape), "second": list(b.shape)},
        )
    ya, yb = luminance(a), luminance(b)
    if shave > 0:
        ya = ya[shave:-shave, shave:-shave]
        yb = yb[shave:-shave, shave:-shave]
    if ya.size == 0:
        raise DegenerateInputError(
            f"Nothing left after shaving {shave} border pixels from {a.shape[1]}x{a.shape[2]}",
            details={"shape": list(a.shape), "shave": shave},
        )
    return ya, yb


def psnr_y(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """PSNR in dB of the Y planes; identical inputs give +inf"""
    ya, yb = _y_planes(a, b, shave)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim_y(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Single-scale SSIM of the Y planes, averaged over valid window positions"""
    ya, yb = _y_planes(a, b, shave)
    if min(ya.shape) < SSIM_WINDOW:
        raise DegenerateInputError(
            f"Y plane {ya.shape[0]}x{ya.shape[1]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            details={"shape": list(ya.shape), "window": SSIM_WINDOW},
        )
    window = gaussian_window()

    def filt(x):
        return convolve2d(x, window, mode="valid")

    mu_a, mu_b = filt(ya), filt(yb)
    var_a = filt(ya * ya) - mu_a * mu_a
    var_b = filt(yb * yb) - mu_b * mu_b
    cov = filt(ya * yb) - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    denominator = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(numerator / denominator))


def summarize(rows: List[MetricRow], shave: int = 0, config: Optional[Dict[str, Any]] = None) -> MetricReport:
    finite = [r.psnr_db for r in rows if math.isfinite(r.psnr_db)]
    return MetricReport(
        rows=rows,
        mean_psnr_db=float(np.mean(finite)) if finite else None,
        mean_ssim=float(np.mean([r.ssim for r in rows])) if rows else None,
        infinite_psnr_count=len(rows) - len(finite),
        shave=shave,
        config=config or {},
    )


class EvaluationService(LoggerMixin):
    """Scores SR outputs against ground truth"""

    def __init__(self, shave: int = 0):
        self.shave = shave

    def score(self, filename: str, sr: np.ndarray, hr: np.ndarray) -> MetricRow:
        return MetricRow(
            filename=filename,
            psnr_db=psnr_y(sr, hr, self.shave),
            ssim=ssim_y(sr, hr, self.shave),
        )

    def evaluate_directories(self, sr_dir: str, hr_dir: str, config: Optional[Dict[str, Any]] = None) -> MetricReport:
        """
        Pair files by name and score each pair

        Every SR file needs a ground-truth file with the same name.
        """
        rows = []
        for sr_path in list_images(sr_dir):
            hr_path = Path(hr_dir) / sr_path.name
            if not hr_path.is_file():
                raise CommonErrors.file_not_found(hr_path, "Ground-truth image")
            rows.append(self.score(sr_path.name, read_image(sr_path), read_image(hr_path)))
        report = summarize(rows, self.shave, config)
        self.log_operation(
            "evaluate", images=len(rows),
            mean_psnr_db=report.mean_psnr_db, mean_ssim=report.mean_ssim,
        )
        return report
