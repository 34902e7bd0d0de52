"""
Image Operations
Resampling, color conversion and window extraction on planar float images.

Images are numpy arrays shaped (channels, height, width) holding float64
samples nominally in [0, 1]. Centers are (x, y) = (column, row).
"""
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from rzsr.core.error_handlers import (
    BoundsError, ChannelCountError, CommonErrors, DegenerateInputError, InvalidScaleError, ShapeError
)
from rzsr.models.schemas import BlurKernel, Patch, ScaleTag

Scale = Union[int, float, Fraction]

# BT.601 studio-range rows for Y, Cb, Cr applied to RGB in [0, 1]
_YCBCR_MATRIX = np.array([
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
]) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate (C, H, W) layout with 1 or 3 channels"""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"{name} must be shaped (1|3, H, W), got {img.shape}")
    if img.shape[1] < 1 or img.shape[2] < 1:
        raise DegenerateInputError(f"{name} is empty", details={"shape": list(img.shape)})
    return img


def output_size(length: int, scale: Scale) -> int:
    """round(length * scale) with halves rounded up"""
    exact = Fraction(length) * Fraction(scale)
    return int(exact + Fraction(1, 2))


def _cubic(x: np.ndarray) -> np.ndarray:
    absx = np.abs(x)
    absx2 = absx ** 2
    absx3 = absx ** 3
    return ((1.5 * absx3 - 2.5 * absx2 + 1.0) * (absx <= 1)
            + (-0.5 * absx3 + 2.5 * absx2 - 4.0 * absx + 2.0) * ((absx > 1) & (absx <= 2)))


def resize_weights(in_length: int, out_length: int, scale: float) -> np.ndarray:
    """
    Dense (out_length, in_length) cubic resampling matrix

    Cubic kernel with a = -0.5, widened by 1/scale when shrinking, with
    symmetric boundary folding. Each row sums to 1.
    """
    kernel_width = 4.0
    if scale < 1:
        def kernel(x):
            return scale * _cubic(scale * x)
        kernel_width /= scale
    else:
        kernel = _cubic

    x = np.arange(1, out_length + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - kernel_width / 2.0)
    taps = int(np.ceil(kernel_width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - indices)
    weights = weights / weights.sum(axis=1, keepdims=True)

    mirror = np.concatenate([np.arange(in_length), np.arange(in_length - 1, -1, -1)])
    folded = mirror[np.mod(indices.astype(np.int64) - 1, 2 * in_length)]

    matrix = np.zeros((out_length, in_length))
    rows = np.repeat(np.arange(out_length), taps)
    np.add.at(matrix, (rows, folded.ravel()), weights.ravel())
    return matrix


def resize_bicubic(img: np.ndarray, scale: Scale) -> np.ndarray:
    """
    Bicubic resize with antialiasing on downscale

    Args:
        img: (C, H, W) image
        scale: Positive factor; output side is round(side * scale)

    Returns:
        Resized image
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"resize expects (C, H, W), got {img.shape}")
    if Fraction(scale) <= 0:
        raise InvalidScaleError(f"Scale must be positive, got {scale}", details={"scale": float(scale)})
    if Fraction(scale) == 1:
        return img.copy()

    _, height, width = img.shape
    out_h, out_w = output_size(height, scale), output_size(width, scale)
    if out_h < 1 or out_w < 1:
        raise InvalidScaleError(
            f"Scale {float(scale)} maps {height}x{width} to an empty image",
            details={"scale": float(scale), "shape": [height, width]},
        )

    rows = resize_weights(height, out_h, float(scale))
    cols = resize_weights(width, out_w, float(scale))
    # horizontal pass on every row, then vertical
    horizontal = img @ cols.T
    return np.matmul(rows[None, :, :], horizontal)


def resize_bilinear(depth: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """
    Resample a single-plane map to (height, width) with bilinear filtering

    Used for depth maps, where cubic overshoot would invent depth orderings.
    """
    height, width = size
    depth = np.asarray(depth, dtype=np.float32)
    if depth.shape == (height, width):
        return depth.astype(np.float64)
    resized = PILImage.fromarray(np.ascontiguousarray(depth)).resize((width, height), PILImage.BILINEAR)
    return np.asarray(resized, dtype=np.float64)


def downsample_with_kernel(img: np.ndarray, kernel: BlurKernel, factor: int) -> np.ndarray:
    """
    Blur with `kernel` (symmetric boundary) then keep every `factor`-th pixel from offset factor // 2
    """
    img = np.asarray(img, dtype=np.float64)
    if factor < 2:
        raise InvalidScaleError(f"Downsampling factor must be >= 2, got {factor}", details={"factor": factor})
    if kernel.side > img.shape[1] or kernel.side > img.shape[2]:
        raise DegenerateInputError(
            f"Kernel of side {kernel.side} is larger than image {img.shape[1]}x{img.shape[2]}",
            details={"kernel_side": kernel.side, "shape": list(img.shape)},
        )
    start = factor // 2
    blurred = np.stack([
        ndimage.convolve(channel, kernel.weights, mode="reflect") for channel in img
    ])
    return blurred[:, start::factor, start::factor]


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ChannelCountError(
            f"YCbCr conversion needs 3 channels, got {img.shape[0] if img.ndim == 3 else img.shape}",
            details={"shape": list(img.shape)},
        )
    return np.einsum("ij,jhw->ihw", _YCBCR_MATRIX, img) + _YCBCR_OFFSET[:, None, None]


def ycbcr_to_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ChannelCountError(
            f"RGB conversion needs 3 channels, got {img.shape}", details={"shape": list(img.shape)}
        )
    return np.einsum("ij,jhw->ihw", _YCBCR_INVERSE, img - _YCBCR_OFFSET[:, None, None])


def luminance(img: np.ndarray) -> np.ndarray:
    """Y plane of an RGB image, or the plane itself for single-channel input"""
    img = check_image(img)
    if img.shape[0] == 1:
        return img[0].astype(np.float64)
    return rgb_to_ycbcr(img)[0]


def window_fits(center: Tuple[int, int], side: int, height: int, width: int) -> bool:
    x, y = center
    half = side // 2
    return x - half >= 0 and y - half >= 0 and x + half <= width and y + half <= height


def crop(img: np.ndarray, center: Tuple[int, int], side: int) -> np.ndarray:
    """Copy the side x side window centered at (x, y); no padding"""
    _, height, width = img.shape
    if side <= 0 or side % 2 != 0 or not window_fits(center, side, height, width):
        raise CommonErrors.out_of_bounds(center, side, img.shape[1:])
    x, y = int(center[0]), int(center[1])
    half = side // 2
    return img[:, y - half:y + half, x - half:x + half].copy()


def extract_patch(
    img: np.ndarray,
    center: Tuple[int, int],
    side: int,
    scale_tag: ScaleTag = ScaleTag.FULL
) -> Patch:
    return Patch(
        scale_tag=scale_tag,
        center=(int(center[0]), int(center[1])),
        side=side,
        pixels=crop(img, center, side),
    )


def dihedral_transform(arr: np.ndarray, transform_id: int) -> np.ndarray:
    """
    Apply one of the 8 rotation/flip symmetries to the two trailing axes

    `transform_id % 4` quarter turns, followed by a horizontal flip when
    `transform_id >= 4`.
    """
    if not 0 <= transform_id < 8:
        raise BoundsError(f"Transform id must be in [0, 8), got {transform_id}")
    out = np.rot90(arr, k=transform_id % 4, axes=(-2, -1))
    if transform_id >= 4:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def inverse_dihedral_transform(arr: np.ndarray, transform_id: int) -> np.ndarray:
    if not 0 <= transform_id < 8:
        raise BoundsError(f"Transform id must be in [0, 8), got {transform_id}")
    out = arr[..., ::-1] if transform_id >= 4 else arr
    return np.ascontiguousarray(np.rot90(out, k=-(transform_id % 4), axes=(-2, -1)))


def pad_to_min_size(img: np.ndarray, side: int) -> Tuple[np.ndarray, Tuple[int, int, int, int]]:
    """Reflect-pad so both spatial dims reach `side`; returns (padded, (top, bottom, left, right))"""
    _, height, width = img.shape
    pad_h = max(0, side - height)
    pad_w = max(0, side - width)
    padding = (pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2)
    if pad_h == 0 and pad_w == 0:
        return img, padding
    mode = "reflect" if min(height, width) > 1 else "edge"
    padded = np.pad(img, ((0, 0), padding[:2], padding[2:]), mode=mode)
    return padded, padding


def clamp01(img: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    return np.clip(img, 0.0, 1.0, out=out)
