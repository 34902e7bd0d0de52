"""
Tests for Y-channel PSNR / SSIM and metric reports
"""
import math

import numpy as np
import pytest

from rzsr.core.error_handlers import DegenerateInputError, FileFormatError, ShapeError
from rzsr.models.dto import MetricRow
from rzsr.services.evaluation_service import (
    SSIM_C1, EvaluationService, gaussian_window, psnr_y, ssim_y, summarize
)
from rzsr.utils.image_io import write_image


class TestPsnr:
    def test_uniform_offset_on_gray(self):
        a = np.full((1, 16, 16), 0.3)
        b = np.full((1, 16, 16), 0.4)
        assert psnr_y(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_uniform_rgb_offset_scales_by_luma_gain(self):
        a = np.full((3, 16, 16), 0.3)
        delta = 0.1
        expected = -20.0 * math.log10(delta * 219.0 / 255.0)
        assert psnr_y(a, a + delta) == pytest.approx(expected, abs=1e-9)

    def test_identical_is_infinite(self, random_image):
        img = random_image(16, 16)
        assert psnr_y(img, img.copy()) == math.inf

    def test_shave_ignores_border(self, random_image):
        a = random_image(20, 20)
        b = a.copy()
        b[:, :2, :] = 0.0
        assert psnr_y(a, b, shave=2) == math.inf
        assert math.isfinite(psnr_y(a, b))

    def test_shape_mismatch(self, random_image):
        with pytest.raises(ShapeError):
            psnr_y(random_image(8, 8), random_image(8, 9))

    def test_over_shaving(self, random_image):
        with pytest.raises(DegenerateInputError):
            psnr_y(random_image(8, 8), random_image(8, 8), shave=4)


class TestSsim:
    def test_window_is_normalized(self):
        window = gaussian_window()
        assert window.shape == (11, 11)
        assert window.sum() == pytest.approx(1.0)

    def test_identical_is_one(self, random_image):
        img = random_image(24, 24)
        assert ssim_y(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self, random_image):
        a, b = random_image(24, 20), random_image(24, 20)
        assert ssim_y(a, b) == pytest.approx(ssim_y(b, a), abs=1e-12)
        assert ssim_y(a, b) < 1.0

    def test_constant_images_closed_form(self):
        a = np.full((1, 16, 16), 0.2)
        b = np.full((1, 16, 16), 0.6)
        expected = (2 * 0.2 * 0.6 + SSIM_C1) / (0.2 ** 2 + 0.6 ** 2 + SSIM_C1)
        assert ssim_y(a, b) == pytest.approx(expected, rel=1e-6)

    def test_too_small_for_window(self, random_image):
        with pytest.raises(DegenerateInputError):
            ssim_y(random_image(10, 30), random_image(10, 30))


class TestReports:
    def test_means_skip_infinite_psnr(self):
        rows = [
            MetricRow(filename="a.png", psnr_db=30.0, ssim=0.9),
            MetricRow(filename="b.png", psnr_db=math.inf, ssim=1.0),
            MetricRow(filename="c.png", psnr_db=20.0, ssim=0.5),
        ]
        report = summarize(rows, shave=2)
        assert report.mean_psnr_db == pytest.approx(25.0)
        assert report.mean_ssim == pytest.approx(0.8)
        assert report.infinite_psnr_count == 1
        assert report.shave == 2

    def test_empty(self):
        report = summarize([])
        assert report.mean_psnr_db is None and report.mean_ssim is None

    def test_directories(self, tmp_path, random_image):
        img = random_image(16, 16)
        write_image(tmp_path / "sr" / "x.png", img)
        write_image(tmp_path / "hr" / "x.png", img)
        report = EvaluationService().evaluate_directories(str(tmp_path / "sr"), str(tmp_path / "hr"))
        assert len(report.rows) == 1
        assert report.rows[0].psnr_db == math.inf
        assert report.rows[0].ssim == pytest.approx(1.0)

    def test_missing_ground_truth(self, tmp_path, random_image):
        write_image(tmp_path / "sr" / "x.png", random_image(16, 16))
        (tmp_path / "hr").mkdir()
        with pytest.raises(FileFormatError):
            EvaluationService().evaluate_directories(str(tmp_path / "sr"), str(tmp_path / "hr"))
