"""
Inference Service
Tiled super-resolution with per-tile cousin retrieval, overlap averaging,
back-projection and the optional geometric self-ensemble
"""
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from rzsr.core.config import Settings
from rzsr.core.error_handlers import ShapeError
from rzsr.core.logging_config import LoggerMixin, get_logger, log_function_call
from rzsr.models.dto import TileAuditRecord
from rzsr.models.schemas import (
    BlurKernel, Descriptor, DescriptorBackend, FeatureMap, ModelMode, OverlapWeighting,
    PatchDatabase, RetrievalMode, ScaleTag, TilePlan
)
from rzsr.services.descriptor_service import extract_image_features, pool_descriptors
from rzsr.services.patch_database_service import (
    PatchDatabaseService, build_candidate_index, build_database, quantize_depth
)
from rzsr.utils.image_ops import (
    check_image, clamp01, crop, dihedral_transform, downsample_with_kernel,
    inverse_dihedral_transform, pad_to_min_size, resize_bicubic, resize_bilinear, window_fits
)

logger = get_logger(__name__)

TAPER_FLOOR = 0.05


class InferenceResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    output: np.ndarray
    tiles: int = 0
    retrievals: int = 0
    fallbacks: int = 0
    audit: List[TileAuditRecord] = Field(default_factory=list)

    @property
    def fallback_rate(self) -> float:
        return self.fallbacks / self.retrievals if self.retrievals else 0.0


# =============================================================================
# TILING
# =============================================================================

def _origins(length: int, side: int, stride: int) -> List[int]:
    last = length - side
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return origins


def plan_tiles(height: int, width: int, side: int, stride: int) -> TilePlan:
    """
    Stride-s window origins with the last window flush against each border

    Dimensions below `side` are reflect-padded up to one window; the padding
    is recorded on the plan and cropped away after aggregation.
    """
    if stride < 1:
        raise ShapeError(f"Tile stride must be >= 1, got {stride}")
    pad_h = max(0, side - height)
    pad_w = max(0, side - width)
    padding = (pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2)
    padded_h, padded_w = height + pad_h, width + pad_w
    return TilePlan(
        tops=_origins(padded_h, side, stride),
        lefts=_origins(padded_w, side, stride),
        side=side,
        stride=stride,
        height=padded_h,
        width=padded_w,
        padding=padding,
    )


def tile_weights(extent: int, weighting: OverlapWeighting) -> np.ndarray:
    """Per-pixel weight of one output tile"""
    if weighting == OverlapWeighting.UNIFORM:
        return np.ones((extent, extent))
    positions = np.arange(extent) + 0.5
    ramp = 1.0 - np.abs(positions - extent / 2.0) / (extent / 2.0)
    ramp = np.maximum(ramp, TAPER_FLOOR)
    return np.outer(ramp, ramp)


# =============================================================================
# BACK-PROJECTION
# =============================================================================

def downscale_residual(sr: np.ndarray, lr: np.ndarray, kernel: Optional[BlurKernel] = None) -> np.ndarray:
    """lr - downscale(sr) under the assumed downscaling model"""
    if kernel is None:
        down = resize_bicubic(sr, 0.5)
    else:
        down = downsample_with_kernel(sr, kernel, 2)
    if down.shape != lr.shape:
        raise ShapeError(
            f"Downscaled SR {down.shape} does not match LR {lr.shape}",
            details={"sr": list(sr.shape), "lr": list(lr.shape)},
        )
    return lr - down


@log_function_call()
def back_project(sr: np.ndarray, lr: np.ndarray, kernel: Optional[BlurKernel] = None, iters: int = 8) -> np.ndarray:
    """
    Iterative back-projection onto the LR observation

    Stops early once the residual norm has grown on two consecutive iterations.
    """
    out = np.array(sr, dtype=np.float64, copy=True)
    if sr.shape[0] != lr.shape[0] or sr.shape[1:] != (2 * lr.shape[1], 2 * lr.shape[2]):
        raise ShapeError(
            f"SR {sr.shape} is not twice the LR {lr.shape}",
            details={"sr": list(sr.shape), "lr": list(lr.shape)},
        )
    previous = None
    increases = 0
    for iteration in range(iters):
        residual = downscale_residual(out, lr, kernel)
        norm = float(np.linalg.norm(residual))
        if previous is not None and norm > previous:
            increases += 1
            if increases >= 2:
                logger.warning(
                    f"Back-projection diverging; stopped after {iteration} iterations",
                    extra={"iteration": iteration, "residual_norm": norm},
                )
                break
        else:
            increases = 0
        out = out + resize_bicubic(residual, 2)
        previous = norm
    return out


# =============================================================================
# TILED SUPER-RESOLUTION
# =============================================================================

def build_search_structure(
    img: np.ndarray,
    depth: Optional[np.ndarray],
    settings: Settings,
    kernel: Optional[BlurKernel] = None
) -> PatchDatabase:
    """The half-scale structure inference retrieves from, built from `img` alone"""
    if kernel is None:
        img2 = resize_bicubic(img, 0.5)
    else:
        img2 = downsample_with_kernel(img, kernel, 2)
    depth2 = None if depth is None else resize_bilinear(depth, img2.shape[1:])
    backend = settings.DESCRIPTOR
    if backend == DescriptorBackend.EXTERNAL_FILE:
        backend = DescriptorBackend.GRADIENT_PYRAMID
    fm2 = extract_image_features(img2, backend, scale_tag=ScaleTag.HALF)
    if settings.RETRIEVAL == RetrievalMode.DATABASE:
        return build_database(img2, depth2, fm2, settings, ScaleTag.HALF)
    return build_candidate_index(img2, depth2, fm2, settings, ScaleTag.HALF)


class InferenceService(LoggerMixin):
    """Applies a trained network to a whole image"""

    def __init__(self, settings: Settings):
        self.settings = settings
        self.db_service = PatchDatabaseService(settings)

    def _features(self, img: np.ndarray, fm: Optional[FeatureMap], padded: bool) -> FeatureMap:
        backend = self.settings.DESCRIPTOR
        if fm is not None and not padded:
            return fm
        if backend == DescriptorBackend.EXTERNAL_FILE:
            self.log_warning("External features do not cover this input; using the gradient pyramid")
            backend = DescriptorBackend.GRADIENT_PYRAMID
        return extract_image_features(img, backend, scale_tag=ScaleTag.FULL)

    def sr_image(
        self,
        img: np.ndarray,
        depth: Optional[np.ndarray],
        net,
        search2: PatchDatabase,
        fm: Optional[FeatureMap] = None,
        show_progress: Optional[bool] = None
    ) -> InferenceResult:
        """
        Super-resolve `img` by 2 tile by tile

        Args:
            img: (C, H, W) input
            depth: Depth aligned to `img`, or None
            net: Trained network (anything with forward(son_up, cousin))
            search2: Half-scale database or candidate index built during training
            fm: Full-scale feature map of `img`; computed when omitted

        Returns:
            Output of shape (C, 2H, 2W) with retrieval counts and the tile audit
        """
        settings = self.settings
        img = check_image(img)
        _, height, width = img.shape
        side = settings.PATCH_SIDE
        plan = plan_tiles(height, width, side, settings.TILE_STRIDE)
        top_pad, bottom_pad, left_pad, right_pad = plan.padding
        padded = any(plan.padding)
        if padded:
            img, _ = pad_to_min_size(img, side)
            if depth is not None:
                depth = np.pad(depth, ((top_pad, bottom_pad), (left_pad, right_pad)), mode="edge")

        upsampled = resize_bicubic(img, 2)
        reference_free = settings.MODE == ModelMode.REFERENCE_FREE
        depth_q = quantize_depth(depth, img.shape[1:])

        origins = list(plan.origins())
        centers = [(left + side // 2, top + side // 2) for top, left in origins]
        descriptors = zero_flags = None
        if not reference_free:
            features = self._features(img, fm, padded)
            descriptors, zero_flags = pool_descriptors(features, centers, side, settings.DESCRIPTOR_GRID)

        extent = 2 * side
        weights = tile_weights(extent, settings.OVERLAP_WEIGHTING)
        accum = np.zeros_like(upsampled)
        counts = np.zeros(upsampled.shape[1:])
        audit: List[TileAuditRecord] = []
        fallbacks = 0

        show = settings.SHOW_PROGRESS if show_progress is None else show_progress
        for index, (top, left) in enumerate(tqdm(origins, desc="infer", disable=not show, leave=False)):
            son_up = upsampled[:, 2 * top:2 * top + extent, 2 * left:2 * left + extent]
            cousin = None
            if not reference_free:
                center = centers[index]
                query = Descriptor(
                    vector=descriptors[index],
                    norm=0.0 if zero_flags[index] else 1.0,
                    is_zero=bool(zero_flags[index]),
                )
                query_depth = float(depth_q[center[1], center[0]])
                result = self.db_service.retrieve(query, query_depth, search2)
                cousin_center = None
                used_fallback = result.used_fallback
                if not used_fallback:
                    cousin_center = (2 * result.cousin_center[0], 2 * result.cousin_center[1])
                    if window_fits(cousin_center, extent, *img.shape[1:]):
                        cousin = crop(img, cousin_center, extent)
                    else:
                        used_fallback = True
                if used_fallback:
                    cousin = son_up.copy()
                    fallbacks += 1
                if settings.AUDIT:
                    audit.append(TileAuditRecord(
                        tile_x=center[0], tile_y=center[1],
                        cousin_x=None if used_fallback else result.cousin_center[0],
                        cousin_y=None if used_fallback else result.cousin_center[1],
                        distance=result.min_distance,
                        used_fallback=used_fallback,
                        query_depth=query_depth,
                        cousin_depth=None if used_fallback else float(search2.depths[result.entry_index]),
                    ))

            try:
                tile = net.forward(son_up, cousin)
            except ShapeError as e:
                raise ShapeError(
                    f"Tile at (x={left}, y={top}): {e.message}",
                    details={**e.details, "tile_x": left, "tile_y": top},
                ) from e

            accum[:, 2 * top:2 * top + extent, 2 * left:2 * left + extent] += weights * tile
            counts[2 * top:2 * top + extent, 2 * left:2 * left + extent] += weights

        output = clamp01(accum / counts[None])
        if padded:
            output = output[:, 2 * top_pad:2 * top_pad + 2 * height, 2 * left_pad:2 * left_pad + 2 * width]
        retrievals = 0 if reference_free else len(origins)
        if retrievals:
            logger.info(
                f"Inferred {len(origins)} tiles, {fallbacks} fallback cousins",
                extra={"tiles": len(origins), "fallbacks": fallbacks},
            )
        return InferenceResult(
            output=np.ascontiguousarray(output), tiles=len(origins),
            retrievals=retrievals, fallbacks=fallbacks, audit=audit,
        )

    def geometric_ensemble(
        self,
        img: np.ndarray,
        depth: Optional[np.ndarray],
        net,
        search2: PatchDatabase,
        fm: Optional[FeatureMap] = None,
        enabled: Optional[bool] = None,
        kernel: Optional[BlurKernel] = None
    ) -> InferenceResult:
        """
        Average sr_image over the eight dihedral transforms of the input

        Each transformed input gets its own half-scale search structure; the
        identity transform reuses `search2`.
        """
        if not (self.settings.ENSEMBLE if enabled is None else enabled):
            return self.sr_image(img, depth, net, search2, fm)

        total = None
        retrievals = fallbacks = tiles = 0
        audit: List[TileAuditRecord] = []
        for transform_id in range(8):
            if transform_id == 0:
                result = self.sr_image(img, depth, net, search2, fm)
                audit = result.audit
            else:
                img_t = dihedral_transform(img, transform_id)
                depth_t = None if depth is None else dihedral_transform(depth, transform_id)
                search_t = build_search_structure(img_t, depth_t, self.settings, kernel)
                result = self.sr_image(img_t, depth_t, net, search_t)
            restored = inverse_dihedral_transform(result.output, transform_id)
            total = restored if total is None else total + restored
            retrievals += result.retrievals
            fallbacks += result.fallbacks
            tiles += result.tiles
        logger.info("Averaged eight dihedral passes", extra={"tiles": tiles, "fallbacks": fallbacks})
        return InferenceResult(
            output=total / 8.0, tiles=tiles, retrievals=retrievals, fallbacks=fallbacks, audit=audit,
        )
