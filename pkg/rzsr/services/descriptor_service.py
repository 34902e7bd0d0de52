"""
Descriptor Service
Image-level feature maps and patch descriptors pooled from them by window indexing
"""
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rzsr.core.error_handlers import CommonErrors, ConfigurationError, FeatureLoadError
from rzsr.core.logging_config import get_logger
from rzsr.models.schemas import Descriptor, DescriptorBackend, FeatureMap, ScaleTag
from rzsr.utils.image_io import read_feature_map
from rzsr.utils.image_ops import check_image, luminance

logger = get_logger(__name__)

PYRAMID_LEVELS = 3
ZERO_NORM = 1e-10
# below this, float32 rounding of unit vectors is all that separates equal content
DISTANCE_SNAP = 1e-6
_POOL_CHUNK = 128


def _box_half(plane: np.ndarray) -> np.ndarray:
    """Exact 2x2 mean; odd trailing row/column is replicated"""
    height, width = plane.shape
    if height % 2:
        plane = np.concatenate([plane, plane[-1:, :]], axis=0)
    if width % 2:
        plane = np.concatenate([plane, plane[:, -1:]], axis=1)
    return 0.25 * (plane[0::2, 0::2] + plane[1::2, 0::2] + plane[0::2, 1::2] + plane[1::2, 1::2])


def _level_channels(plane: np.ndarray) -> np.ndarray:
    """Centered luminance and absolute forward differences along x and y"""
    grad_x = np.zeros_like(plane)
    grad_y = np.zeros_like(plane)
    grad_x[:, :-1] = np.abs(plane[:, 1:] - plane[:, :-1])
    grad_y[:-1, :] = np.abs(plane[1:, :] - plane[:-1, :])
    return np.stack([plane - plane.mean(), grad_x, grad_y])


def gradient_pyramid_features(img: np.ndarray, levels: int = PYRAMID_LEVELS) -> np.ndarray:
    """
    9-channel map: for each of 3 pyramid levels, {luminance, |dx|, |dy|},
    with coarse levels expanded back to full resolution by pixel replication
    """
    plane = luminance(img)
    height, width = plane.shape
    channels = []
    for level in range(levels):
        block = _level_channels(plane)
        if level:
            factor = 2 ** level
            block = np.repeat(np.repeat(block, factor, axis=1), factor, axis=2)[:, :height, :width]
        channels.append(block)
        if level + 1 < levels:
            plane = _box_half(plane)
    return np.concatenate(channels, axis=0)


def extract_image_features(
    img: np.ndarray,
    backend: DescriptorBackend,
    features_dir: Optional[str] = None,
    scale_tag: ScaleTag = ScaleTag.FULL
) -> FeatureMap:
    """
    Compute (or load) the image-level feature map

    Args:
        img: (C, H, W) image
        backend: Feature backend
        features_dir: Directory with x1.fmap / x2.fmap / x4.fmap (external-file backend)
        scale_tag: Which pyramid level `img` is, selecting the external file
    """
    img = check_image(img)
    if backend == DescriptorBackend.PIXEL:
        return FeatureMap(data=np.asarray(img, dtype=np.float64).copy(), stride=1)
    if backend == DescriptorBackend.GRADIENT_PYRAMID:
        return FeatureMap(data=gradient_pyramid_features(img), stride=1)
    if backend == DescriptorBackend.EXTERNAL_FILE:
        if not features_dir:
            raise FeatureLoadError("External-file descriptors need a features directory (FEATURES_PATH)")
        path = Path(features_dir) / f"{scale_tag.value}.fmap"
        return read_feature_map(path, img.shape[1:])
    raise ConfigurationError(f"Unknown descriptor backend {backend}")


def _feature_window(fm: FeatureMap, center: Tuple[int, int], side: int) -> Tuple[int, int, int]:
    """(top, left, side) of the window in feature-grid coordinates"""
    stride = fm.stride
    x, y = center
    half = side // 2
    left = (x - half) // stride
    top = (y - half) // stride
    extent = -(-side // stride)
    _, height, width = fm.data.shape
    if x - half < 0 or y - half < 0 or top + extent > height or left + extent > width:
        raise CommonErrors.out_of_bounds(center, side, (height * stride, width * stride))
    return top, left, extent


def _normalize_rows(pooled: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((pooled * pooled).sum(axis=1))
    zero = norms <= ZERO_NORM
    safe = np.where(zero, 1.0, norms)
    vectors = pooled / safe[:, None]
    vectors[zero] = 0.0
    # stored precision; queries and entries share it so equal content compares equal
    vectors = vectors.astype(np.float32).astype(np.float64)
    return vectors, zero


def pool_descriptors(
    fm: FeatureMap,
    centers: Sequence[Tuple[int, int]],
    side: int,
    grid: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean-pool and L2-normalize windows of a feature map

    Args:
        fm: Feature map
        centers: (x, y) window centers in image coordinates
        side: Window side in image pixels
        grid: Pool over a grid x grid split of each window

    Returns:
        (descriptors (N, L), zero_flags (N,))
    """
    length = fm.channels * grid * grid
    if len(centers) == 0:
        return np.zeros((0, length)), np.zeros(0, dtype=bool)

    windows = [_feature_window(fm, (int(c[0]), int(c[1])), side) for c in centers]
    extent = windows[0][2]
    if extent % grid != 0:
        raise ConfigurationError(
            f"Window of {extent} feature cells cannot be split into a {grid}x{grid} grid",
            details={"extent": extent, "grid": grid},
        )
    tops = np.array([w[0] for w in windows])
    lefts = np.array([w[1] for w in windows])
    view = sliding_window_view(fm.data, (extent, extent), axis=(1, 2))

    sub = extent // grid
    pooled = np.empty((len(centers), length))
    for start in range(0, len(centers), _POOL_CHUNK):
        stop = start + _POOL_CHUNK
        block = np.ascontiguousarray(view[:, tops[start:stop], lefts[start:stop]])
        block = np.moveaxis(block, 1, 0)
        count = block.shape[0]
        cells = block.reshape(count, fm.channels, grid, sub, grid, sub)
        pooled[start:stop] = cells.mean(axis=(3, 5)).reshape(count, length)
    return _normalize_rows(pooled)


def patch_descriptor(fm: FeatureMap, center: Tuple[int, int], side: int, grid: int = 1) -> Descriptor:
    vectors, zero = pool_descriptors(fm, [center], side, grid)
    return Descriptor(vector=vectors[0], norm=0.0 if zero[0] else 1.0, is_zero=bool(zero[0]))


def _cosine_distance(dots: np.ndarray) -> np.ndarray:
    dist = np.clip(1.0 - dots, 0.0, 2.0)
    dist[dist < DISTANCE_SNAP] = 0.0
    return dist


def descriptor_distance(a: Descriptor, b: Descriptor) -> float:
    """1 - cosine similarity in [0, 2]; 2 when either side is a zero descriptor"""
    if len(a) != len(b):
        raise ConfigurationError(
            f"Descriptor lengths differ ({len(a)} vs {len(b)})",
            details={"left": len(a), "right": len(b)},
        )
    if a.is_zero or b.is_zero:
        return 2.0
    return float(_cosine_distance(np.atleast_1d((a.vector * b.vector).sum()))[0])


def distances_to(query: Descriptor, descriptors: np.ndarray, zero_flags: np.ndarray) -> np.ndarray:
    """Distances from one query to each row; per-row reductions keep results subset-independent"""
    if descriptors.shape[0] == 0:
        return np.zeros(0)
    if descriptors.shape[1] != len(query):
        raise ConfigurationError(
            f"Descriptor lengths differ ({len(query)} vs {descriptors.shape[1]})",
            details={"left": len(query), "right": int(descriptors.shape[1])},
        )
    if query.is_zero:
        return np.full(descriptors.shape[0], 2.0)
    dist = _cosine_distance((descriptors * query.vector[None, :]).sum(axis=1))
    dist[zero_flags] = 2.0
    return dist


def pairwise_distances(descriptors: np.ndarray, zero_flags: np.ndarray) -> np.ndarray:
    """Symmetric distance matrix with a zero diagonal"""
    count = descriptors.shape[0]
    dist = np.empty((count, count))
    for i in range(count):
        dist[i] = _cosine_distance((descriptors * descriptors[i][None, :]).sum(axis=1))
    dist[zero_flags, :] = 2.0
    dist[:, zero_flags] = 2.0
    np.fill_diagonal(dist, 0.0)
    return np.minimum(dist, dist.T)
