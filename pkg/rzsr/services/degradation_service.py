"""
Degradation Service
LR synthesis protocols: bicubic, random anisotropic Gaussian kernels and kernel files
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import multivariate_normal

from rzsr.core.error_handlers import CommonErrors
from rzsr.core.logging_config import LoggerMixin, get_logger
from rzsr.models.dto import DegradationEntry, DegradationManifest, KernelManifest
from rzsr.models.schemas import BlurKernel, DegradationMode, DegradationSpec
from rzsr.utils.helpers import ensure_dir, list_images, write_json
from rzsr.utils.image_io import read_image, read_kernel, sha256_file, write_image, write_kernel
from rzsr.utils.image_ops import clamp01, downsample_with_kernel, resize_bicubic

logger = get_logger(__name__)


def sample_kernel_params(spec: DegradationSpec, rng: np.random.Generator) -> Tuple[float, float, float]:
    """(lambda_1, lambda_2, theta) drawn from the protocol ranges"""
    lambda_1 = float(rng.uniform(spec.lambda_min, spec.lambda_max))
    lambda_2 = float(rng.uniform(spec.lambda_min, spec.lambda_max))
    theta = float(rng.uniform(0.0, np.pi))
    return lambda_1, lambda_2, theta


def gaussian_kernel(lambda_1: float, lambda_2: float, theta: float, size: int = 11) -> BlurKernel:
    """
    Anisotropic Gaussian sampled on a size x size grid

    Covariance has eigenvalues lambda_1^2 along the direction theta (measured
    from the x axis) and lambda_2^2 across it.
    """
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    covariance = rotation @ np.diag([lambda_1 ** 2, lambda_2 ** 2]) @ rotation.T
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    grid_x, grid_y = np.meshgrid(coords, coords, indexing="xy")
    points = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)
    density = multivariate_normal(mean=np.zeros(2), cov=covariance).pdf(points).reshape(size, size)
    return BlurKernel.normalized(density)


def draw_kernel(spec: DegradationSpec, rng: np.random.Generator) -> Tuple[BlurKernel, Dict[str, float]]:
    """One random kernel together with the parameters it was drawn with"""
    lambda_1, lambda_2, theta = sample_kernel_params(spec, rng)
    params = {"lambda_1": lambda_1, "lambda_2": lambda_2, "theta": theta}
    return gaussian_kernel(lambda_1, lambda_2, theta, spec.kernel_size), params


def make_random_kernel(spec: DegradationSpec, rng: Optional[np.random.Generator] = None) -> BlurKernel:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    return draw_kernel(spec, rng)[0]


def degrade(
    img: np.ndarray,
    spec: DegradationSpec,
    kernel: Optional[BlurKernel] = None,
    rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """
    Produce the LR observation of `img`

    Bicubic mode is exactly resize_bicubic(img, 1/factor); kernel modes blur
    and subsample. Additive Gaussian noise is applied when noise_sigma > 0.
    """
    if spec.mode == DegradationMode.BICUBIC:
        lr = resize_bicubic(img, 1.0 / spec.factor)
    else:
        if kernel is None:
            if spec.mode == DegradationMode.FILE_KERNEL:
                if not spec.kernel_path:
                    raise CommonErrors.file_not_found("<unset>", "Kernel file")
                kernel = read_kernel(spec.kernel_path)
            else:
                kernel = make_random_kernel(spec, rng)
        lr = downsample_with_kernel(img, kernel, spec.factor)
    if spec.noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        lr = clamp01(lr + rng.normal(0.0, spec.noise_sigma, size=lr.shape))
    return lr


class DegradationService(LoggerMixin):
    """Writes LR datasets and kernel banks with their manifests"""

    def __init__(self, spec: DegradationSpec, config: Optional[Dict[str, Any]] = None):
        self.spec = spec
        self.config = config or {}

    def degrade_directory(self, input_dir: str, output_dir: str) -> DegradationManifest:
        """
        Degrade every PNG of `input_dir` into `output_dir`

        Image i uses the generator seeded with seed + i, so any single file can
        be regenerated from the manifest.
        """
        spec = self.spec
        out = ensure_dir(output_dir)
        images = list_images(input_dir)
        file_kernel = read_kernel(spec.kernel_path) if spec.mode == DegradationMode.FILE_KERNEL else None
        entries: List[DegradationEntry] = []
        for index, path in enumerate(images):
            seed = spec.seed + index
            rng = np.random.default_rng(seed)
            kernel = file_kernel
            kernel_file = spec.kernel_path
            params = None
            if spec.mode == DegradationMode.RANDOM_KERNEL:
                kernel, params = draw_kernel(spec, rng)
                kernel_file = str(write_kernel(out / f"{path.stem}_kernel.txt", kernel))
            lr = degrade(read_image(path), spec, kernel, rng)
            lr_path = write_image(out / path.name, lr)
            entries.append(DegradationEntry(
                filename=path.name,
                output=str(lr_path),
                seed=seed,
                kernel_path=kernel_file,
                kernel_params=params,
                input_hash=sha256_file(path),
                output_hash=sha256_file(lr_path),
            ))
            self.log_debug(f"Degraded {path.name}", seed=seed)

        manifest = DegradationManifest(
            mode=spec.mode.value, factor=spec.factor, seed=spec.seed,
            noise_sigma=spec.noise_sigma, config=self.config, entries=entries,
        )
        write_json(out / "manifest.json", manifest)
        self.log_operation("degrade", images=len(entries), mode=spec.mode.value)
        return manifest

    def generate_kernels(self, count: int, output_dir: str) -> KernelManifest:
        """Write `count` random kernels drawn from one seeded generator"""
        out = ensure_dir(output_dir)
        rng = np.random.default_rng(self.spec.seed)
        kernels = []
        for index in range(count):
            kernel, params = draw_kernel(self.spec, rng)
            path = write_kernel(Path(out) / f"kernel_{index:04d}.txt", kernel)
            kernels.append({"path": str(path), **params})
        manifest = KernelManifest(
            seed=self.spec.seed, count=count, size=self.spec.kernel_size, config=self.config, kernels=kernels,
        )
        write_json(Path(out) / "manifest.json", manifest)
        self.log_operation("kernel-gen", count=count)
        return manifest
