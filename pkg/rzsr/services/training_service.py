"""
Training Service
Mines LR-son / HR-father / HR-cousin triplets from the input image and runs
the test-time training loop with the plateau learning-rate rule
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from rzsr.core.config import Settings
from rzsr.core.error_handlers import PipelineError, TrainingDivergedError
from rzsr.core.logging_config import LoggerMixin, get_logger, log_function_call
from rzsr.models.dto import LossRecord
from rzsr.models.schemas import (
    BlurKernel, Descriptor, DescriptorBackend, FeatureMap, ModelMode, PatchDatabase,
    RetrievalMode, ScaleTag, Triplet
)
from rzsr.network.model import RZSRNetwork
from rzsr.network.optim import AdamState, LrSchedule, adam_step
from rzsr.services.descriptor_service import extract_image_features
from rzsr.services.patch_database_service import (
    PatchDatabaseService, build_candidate_index, build_database, derive_scaled_database
)
from rzsr.utils.image_ops import (
    crop, dihedral_transform, downsample_with_kernel, resize_bicubic, resize_bilinear, window_fits
)

logger = get_logger(__name__)


class ImagePyramid(BaseModel):
    """I, I/2, I/4 with aligned depth maps and feature maps"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    img: np.ndarray
    img2: np.ndarray
    img4: np.ndarray
    depth: Optional[np.ndarray] = None
    depth2: Optional[np.ndarray] = None
    depth4: Optional[np.ndarray] = None
    fm: FeatureMap
    fm2: FeatureMap
    fm4: FeatureMap


class TrainingContext(BaseModel):
    """Pyramid plus the search structures built from it"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    pyramid: ImagePyramid
    db2: PatchDatabase
    search2: PatchDatabase
    search4: PatchDatabase


class TrainingResult(BaseModel):
    records: List[LossRecord] = Field(default_factory=list)
    iterations: int = 0
    final_lr: float
    lr_trace: List[float] = Field(default_factory=list)
    stop_reason: str = "max_iters"


def downscale(img: np.ndarray, kernel: Optional[BlurKernel] = None) -> np.ndarray:
    """Halve an image with bicubic resizing, or with the blur kernel when one is given"""
    if kernel is None:
        return resize_bicubic(img, 0.5)
    return downsample_with_kernel(img, kernel, 2)


@log_function_call()
def build_pyramid(
    img: np.ndarray,
    depth: Optional[np.ndarray],
    backend: DescriptorBackend,
    features_dir: Optional[str] = None,
    kernel: Optional[BlurKernel] = None
) -> ImagePyramid:
    img2 = downscale(img, kernel)
    img4 = downscale(img2, kernel)
    depth2 = depth4 = None
    if depth is not None:
        depth2 = resize_bilinear(depth, img2.shape[1:])
        depth4 = resize_bilinear(depth, img4.shape[1:])
    return ImagePyramid(
        img=img, img2=img2, img4=img4,
        depth=depth, depth2=depth2, depth4=depth4,
        fm=extract_image_features(img, backend, features_dir, ScaleTag.FULL),
        fm2=extract_image_features(img2, backend, features_dir, ScaleTag.HALF),
        fm4=extract_image_features(img4, backend, features_dir, ScaleTag.QUARTER),
    )


def augment_triplet(triplet: Triplet, transform_id: int) -> Triplet:
    """Apply the same dihedral transform to son, father and cousin"""
    if transform_id == 0:
        return triplet
    return triplet.model_copy(update={
        "son": dihedral_transform(triplet.son, transform_id),
        "son_up": dihedral_transform(triplet.son_up, transform_id),
        "father": dihedral_transform(triplet.father, transform_id),
        "cousin": None if triplet.cousin is None else dihedral_transform(triplet.cousin, transform_id),
    })



class TrainingService(LoggerMixin):
    """Triplet mining and the training loop for one image"""

    def __init__(
        self,
        settings: Settings,
        features_dir: Optional[str] = None,
        kernel: Optional[BlurKernel] = None
    ):
        self.settings = settings
        self.features_dir = features_dir
        self.kernel = kernel
        self.db_service = PatchDatabaseService(settings)

    # =========================================================================
    # TRIPLET MINING
    # =========================================================================

    def prepare(self, img: np.ndarray, depth: Optional[np.ndarray]) -> TrainingContext:
        """Build the pyramid, the son database and the search structures at both coarse scales"""
        settings = self.settings
        pyramid = build_pyramid(img, depth, settings.DESCRIPTOR, self.features_dir, self.kernel)
        side = settings.PATCH_SIDE
        if min(pyramid.img2.shape[1:]) < side:
            raise PipelineError(
                f"Image {img.shape[1]}x{img.shape[2]} is too small for {side}px sons; use a smaller PATCH_SIDE",
                stage="build-database",
                details={"shape": list(img.shape), "patch_side": side},
            )

        db2 = build_database(pyramid.img2, pyramid.depth2, pyramid.fm2, settings, ScaleTag.HALF)
        if settings.RETRIEVAL == RetrievalMode.DATABASE:
            search2 = db2
            search4 = derive_scaled_database(db2, pyramid.img4, pyramid.fm4, settings.DESCRIPTOR_GRID)
        else:
            search2 = build_candidate_index(pyramid.img2, pyramid.depth2, pyramid.fm2, settings, ScaleTag.HALF)
            search4 = build_candidate_index(pyramid.img4, pyramid.depth4, pyramid.fm4, settings, ScaleTag.QUARTER)
        return TrainingContext(pyramid=pyramid, db2=db2, search2=search2, search4=search4)

    def _son_candidates(self, context: TrainingContext) -> List[Tuple[Tuple[int, int], float, Descriptor]]:
        """Database sons whose fathers fit, topped up with evenly spaced lattice samples"""
        pyramid = context.pyramid
        side = self.settings.PATCH_SIDE
        _, height, width = pyramid.img.shape

        def father_fits(center) -> bool:
            return window_fits((2 * center[0], 2 * center[1]), 2 * side, height, width)

        sons = []
        taken = set()
        for entry in context.db2.entries:
            if father_fits(entry.center):
                sons.append((entry.center, entry.depth, entry.descriptor))
                taken.add(entry.center)

        shortfall = self.settings.MIN_TRIPLETS - len(sons)
        if shortfall > 0:
            lattice = build_candidate_index(pyramid.img2, pyramid.depth2, pyramid.fm2, self.settings, ScaleTag.HALF)
            extras = [e for e in lattice.entries if e.center not in taken and father_fits(e.center)]
            if extras:
                picks = np.unique(np.round(np.linspace(0, len(extras) - 1, min(shortfall, len(extras)))).astype(int))
                for i in picks:
                    sons.append((extras[i].center, extras[i].depth, extras[i].descriptor))
                logger.info(f"Topped up sons with {len(picks)} lattice samples", extra={"extra_sons": len(picks)})
        return sons

    def build_training_set(self, context: TrainingContext) -> List[Triplet]:
        """
        Pair every son with its father and retrieved cousin

        Cousins come from the quarter-scale search structure and are cut from
        the half-scale image at doubled coordinates; failed or out-of-bounds
        retrievals fall back to the bicubic-upsampled son.
        """
        settings = self.settings
        pyramid = context.pyramid
        side = settings.PATCH_SIDE
        sons = self._son_candidates(context)
        if not sons:
            raise PipelineError(
                f"No {2 * side}px father fits inside the {pyramid.img.shape[1]}x{pyramid.img.shape[2]} image; "
                f"use a smaller PATCH_SIDE",
                stage="mine-triplets",
                details={"patch_side": side},
            )

        reference_free = settings.MODE == ModelMode.REFERENCE_FREE
        triplets: List[Triplet] = []
        for triplet_id, (center, depth, descriptor) in enumerate(sons):
            son = crop(pyramid.img2, center, side)
            son_up = resize_bicubic(son, 2)
            father = crop(pyramid.img, (2 * center[0], 2 * center[1]), 2 * side)
            cousin, cousin_center, distance, used_fallback = None, None, 2.0, False
            if not reference_free:
                result = self.db_service.retrieve(descriptor, depth, context.search4)
                distance = result.min_distance
                used_fallback = result.used_fallback
                if not used_fallback:
                    cousin_center = (2 * result.cousin_center[0], 2 * result.cousin_center[1])
                    if window_fits(cousin_center, 2 * side, *pyramid.img2.shape[1:]):
                        cousin = crop(pyramid.img2, cousin_center, 2 * side)
                    else:
                        used_fallback, cousin_center = True, None
                if used_fallback:
                    cousin = son_up.copy()
            triplets.append(Triplet(
                triplet_id=triplet_id, son_center=center, son=son, son_up=son_up, father=father,
                cousin=cousin, cousin_center=cousin_center, distance=distance, used_fallback=used_fallback,
            ))

        fallbacks = sum(t.used_fallback for t in triplets)
        logger.info(
            f"Mined {len(triplets)} triplets ({fallbacks} fallback cousins)",
            extra={"triplets": len(triplets), "fallbacks": fallbacks},
        )
        return triplets

    # =========================================================================
    # TRAINING LOOP
    # =========================================================================

    @staticmethod
    def reconstruction_error(net: RZSRNetwork, triplets: List[Triplet]) -> float:
        errors = [
            float(np.mean((net.forward(t.son_up, t.cousin) - t.father) ** 2))
            for t in triplets
        ]
        return float(np.mean(errors))

    def train(self, net: RZSRNetwork, triplets: List[Triplet], show_progress: Optional[bool] = None) -> TrainingResult:
        """
        Fit the network to the image's own triplets

        Args:
            net: Network updated in place
            triplets: Training samples
            show_progress: Override SHOW_PROGRESS

        Returns:
            Loss trace and schedule outcome
        """
        settings = self.settings
        if not triplets:
            raise PipelineError("Training needs at least one triplet", stage="train")
        rng = np.random.default_rng(settings.SEED)
        state = AdamState(net.params)
        schedule = LrSchedule(settings.LEARNING_RATE, settings.LR_DROP_FACTOR, settings.MIN_LEARNING_RATE, settings.SLOPE_WINDOW)
        eval_set = triplets[:settings.EVAL_TRIPLETS]
        records: List[LossRecord] = []
        stop_reason = "max_iters"
        show = settings.SHOW_PROGRESS if show_progress is None else show_progress

        progress = tqdm(range(settings.MAX_ITERS), desc="train", disable=not show, leave=False)
        for iteration in progress:
            index = int(rng.integers(len(triplets)))
            transform_id = int(rng.integers(8)) if settings.AUGMENT else 0
            sample = augment_triplet(triplets[index], transform_id)

            output = net.forward(sample.son_up, sample.cousin, training=True)
            diff = output.astype(np.float64) - sample.father
            loss = float(np.mean(diff ** 2))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"Non-finite loss at iteration {iteration}",
                    details={"lr": schedule.lr, "iteration": iteration, "triplet_id": sample.triplet_id},
                )
            grads = net.backward(2.0 * diff / diff.size)
            adam_step(net.params, grads, state, schedule.lr)
            records.append(LossRecord(
                iteration=iteration, loss=loss, lr=schedule.lr,
                triplet_id=sample.triplet_id, used_fallback=sample.used_fallback,
            ))

            if (iteration + 1) % settings.CHECK_EVERY == 0:
                error = self.reconstruction_error(net, eval_set)
                schedule.update(error)
                progress.set_postfix(loss=f"{loss:.3g}", lr=f"{schedule.lr:.1g}")
                if schedule.finished:
                    stop_reason = "min_lr"
                    break

        logger.info(
            f"Training finished after {len(records)} iterations ({stop_reason}), lr={schedule.lr:.3g}",
            extra={"iterations": len(records), "stop_reason": stop_reason},
        )
        return TrainingResult(
            records=records, iterations=len(records), final_lr=schedule.lr,
            lr_trace=schedule.lr_trace, stop_reason=stop_reason,
        )
