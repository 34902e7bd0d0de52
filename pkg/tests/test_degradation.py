"""
Tests for blur kernels and LR synthesis
"""
import json

import numpy as np
import pytest
from pydantic import ValidationError

from rzsr.core.error_handlers import FileFormatError
from rzsr.models.schemas import BlurKernel, DegradationMode, DegradationSpec
from rzsr.services.degradation_service import (
    DegradationService, degrade, draw_kernel, gaussian_kernel, make_random_kernel
)
from rzsr.utils.image_io import read_kernel, write_image, write_kernel
from rzsr.utils.image_ops import downsample_with_kernel, resize_bicubic


def _moments(kernel):
    half = kernel.side // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    grid_x, grid_y = np.meshgrid(coords, coords, indexing="xy")
    w = kernel.weights
    return (w * grid_x ** 2).sum(), (w * grid_y ** 2).sum(), (w * grid_x * grid_y).sum()


class TestGaussianKernel:
    def test_normalized(self):
        kernel = gaussian_kernel(2.3, 0.9, 1.1, 11)
        assert abs(kernel.weights.sum() - 1.0) <= 1e-6
        assert kernel.side == 11
        assert np.all(kernel.weights >= 0)

    def test_isotropic_ignores_angle(self):
        a = gaussian_kernel(1.5, 1.5, 0.0, 9)
        b = gaussian_kernel(1.5, 1.5, 1.2, 9)
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-12)
        np.testing.assert_allclose(a.weights, a.weights.T, atol=1e-12)

    def test_second_moments_match_covariance(self):
        l1, l2, theta = 1.5, 0.8, np.pi / 6
        kernel = gaussian_kernel(l1, l2, theta, 41)
        xx, yy, xy = _moments(kernel)
        c, s = np.cos(theta), np.sin(theta)
        np.testing.assert_allclose(xx, l1 ** 2 * c ** 2 + l2 ** 2 * s ** 2, rtol=1e-3)
        np.testing.assert_allclose(yy, l1 ** 2 * s ** 2 + l2 ** 2 * c ** 2, rtol=1e-3)
        np.testing.assert_allclose(xy, (l1 ** 2 - l2 ** 2) * c * s, rtol=1e-3)

    def test_zero_angle_spreads_along_columns(self):
        xx, yy, _ = _moments(gaussian_kernel(3.0, 1.0, 0.0, 21))
        assert xx > yy

    def test_draw_is_seeded(self):
        spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL, seed=4)
        a, params_a = draw_kernel(spec, np.random.default_rng(4))
        b, params_b = draw_kernel(spec, np.random.default_rng(4))
        np.testing.assert_array_equal(a.weights, b.weights)
        assert params_a == params_b
        assert 0.6 <= params_a["lambda_1"] <= 5.0
        assert 0.0 <= params_a["theta"] <= np.pi

    def test_even_kernel_size_is_rejected(self):
        with pytest.raises(ValidationError):
            DegradationSpec(kernel_size=10)


class TestDegrade:
    def test_bicubic_is_plain_resize(self, smooth_image):
        img = smooth_image(32, 24)
        lr = degrade(img, DegradationSpec(factor=2))
        np.testing.assert_array_equal(lr, resize_bicubic(img, 0.5))

    def test_bicubic_factor_four(self, smooth_image):
        assert degrade(smooth_image(32, 32), DegradationSpec(factor=4)).shape == (3, 8, 8)

    def test_given_kernel(self, smooth_image):
        img = smooth_image(32, 32)
        kernel = gaussian_kernel(1.0, 1.0, 0.0, 5)
        spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL)
        np.testing.assert_array_equal(degrade(img, spec, kernel), downsample_with_kernel(img, kernel, 2))

    def test_file_kernel(self, tmp_path, smooth_image):
        kernel = BlurKernel.normalized(np.ones((3, 3)))
        path = write_kernel(tmp_path / "k.txt", kernel)
        spec = DegradationSpec(mode=DegradationMode.FILE_KERNEL, kernel_path=str(path))
        img = smooth_image(16, 16)
        np.testing.assert_allclose(degrade(img, spec), downsample_with_kernel(img, kernel, 2), atol=1e-12)

    def test_file_kernel_needs_path(self, smooth_image):
        with pytest.raises(FileFormatError):
            degrade(smooth_image(16, 16), DegradationSpec(mode=DegradationMode.FILE_KERNEL))

    def test_noise_is_seeded_and_clamped(self, smooth_image):
        spec = DegradationSpec(noise_sigma=0.05, seed=9)
        img = smooth_image(32, 32)
        a, b = degrade(img, spec), degrade(img, spec)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert not np.array_equal(a, resize_bicubic(img, 0.5))

    def test_random_kernel_is_seeded(self, smooth_image):
        spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL, seed=3)
        img = smooth_image(32, 32)
        np.testing.assert_array_equal(degrade(img, spec), degrade(img, spec))
        np.testing.assert_array_equal(make_random_kernel(spec).weights, make_random_kernel(spec).weights)


class TestDegradationService:
    @pytest.fixture
    def hr_dir(self, tmp_path, smooth_image, random_image):
        directory = tmp_path / "hr"
        write_image(directory / "a.png", smooth_image(32, 32))
        write_image(directory / "b.png", random_image(24, 16))
        return directory

    def test_random_kernel_dataset(self, tmp_path, hr_dir):
        spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL, seed=7)
        out = tmp_path / "lr"
        manifest = DegradationService(spec, {"SEED": 7}).degrade_directory(str(hr_dir), str(out))
        assert [e.filename for e in manifest.entries] == ["a.png", "b.png"]
        assert [e.seed for e in manifest.entries] == [7, 8]
        for entry in manifest.entries:
            regenerated, params = draw_kernel(spec, np.random.default_rng(entry.seed))
            np.testing.assert_array_equal(read_kernel(entry.kernel_path).weights, regenerated.weights)
            assert entry.kernel_params == params
        payload = json.loads((out / "manifest.json").read_text())
        assert payload["mode"] == "random-kernel"
        assert payload["config"] == {"SEED": 7}
        assert len(payload["entries"]) == 2

    def test_rerun_is_byte_identical(self, tmp_path, hr_dir):
        spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL, seed=1, noise_sigma=0.01)
        first = DegradationService(spec).degrade_directory(str(hr_dir), str(tmp_path / "one"))
        second = DegradationService(spec).degrade_directory(str(hr_dir), str(tmp_path / "two"))
        assert [e.output_hash for e in first.entries] == [e.output_hash for e in second.entries]

    def test_missing_input_directory(self, tmp_path):
        with pytest.raises(FileFormatError):
            DegradationService(DegradationSpec()).degrade_directory(str(tmp_path / "none"), str(tmp_path / "out"))

    def test_kernel_bank(self, tmp_path):
        spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL, seed=2, kernel_size=7)
        manifest = DegradationService(spec, {"KERNEL_SIZE": 7}).generate_kernels(3, str(tmp_path / "bank"))
        assert manifest.count == 3 and manifest.size == 7
        assert manifest.config == {"KERNEL_SIZE": 7}
        for i, record in enumerate(manifest.kernels):
            assert record["path"].endswith(f"kernel_{i:04d}.txt")
            assert read_kernel(record["path"]).side == 7
        assert (tmp_path / "bank" / "manifest.json").is_file()
