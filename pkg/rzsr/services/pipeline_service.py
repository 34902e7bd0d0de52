"""
Pipeline Service
End-to-end super-resolution runs: database construction, triplet mining,
training, tiled inference and back-projection, cascaded for larger factors
"""
import math
import time
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from rzsr.core.config import Settings
from rzsr.core.error_handlers import stage_guard
from rzsr.core.logging_config import LoggerMixin, generate_run_id, get_logger, set_run_context
from rzsr.database.checkpoint_repository import get_checkpoint_repository
from rzsr.models.dto import AblationRow, LossRecord, MetricRow, RunManifest, TileAuditRecord
from rzsr.models.schemas import BlurKernel, DescriptorBackend, ModelMode, NoDepthPolicy, RetrievalMode
from rzsr.network.model import RZSRNetwork
from rzsr.services.evaluation_service import EvaluationService, summarize
from rzsr.services.inference_service import InferenceService, back_project
from rzsr.services.performance_service import StageTracker
from rzsr.services.training_service import TrainingService
from rzsr.utils.helpers import ensure_dir, list_images, write_csv, write_json
from rzsr.utils.image_io import read_depth, read_image, read_kernel, sha256_array, sha256_file, write_image
from rzsr.utils.image_ops import check_image, clamp01, resize_bicubic, resize_bilinear

logger = get_logger(__name__)

LOSS_COLUMNS = ["iteration", "loss", "lr", "triplet_id", "used_fallback"]
AUDIT_COLUMNS = [
    "tile_x", "tile_y", "cousin_x", "cousin_y", "distance", "used_fallback", "query_depth", "cousin_depth",
]
METRIC_COLUMNS = ["filename", "psnr_db", "ssim"]
ABLATION_COLUMNS = ["variant", "mode", "retrieval", "mean_psnr_db", "mean_ssim", "runtime_seconds", "images"]


class StageOutcome(BaseModel):
    """Result of one x2 step of the cascade"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    output: np.ndarray
    net: RZSRNetwork
    triplets: int
    training_fallbacks: int
    retrievals: int
    fallbacks: int
    iterations: int
    final_lr: float
    losses: List[LossRecord] = Field(default_factory=list)
    audit: List[TileAuditRecord] = Field(default_factory=list)


class SuperResolution(BaseModel):
    """Result of a whole run"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    output: np.ndarray
    stages: List[StageOutcome]
    warnings: List[str] = Field(default_factory=list)

    @property
    def retrievals(self) -> int:
        return sum(s.retrievals for s in self.stages)

    @property
    def fallbacks(self) -> int:
        return sum(s.fallbacks for s in self.stages)


def cascade_steps(scale: int) -> int:
    """Number of x2 passes needed to reach at least `scale`"""
    return max(1, math.ceil(math.log2(scale)))


def effective_settings(settings: Settings, has_depth: bool) -> Tuple[Settings, Optional[str]]:
    """Settings adjusted for a missing depth map, plus the warning to report"""
    if has_depth or settings.MODE == ModelMode.REFERENCE_FREE:
        return settings, None
    if settings.NO_DEPTH_POLICY == NoDepthPolicy.EXHAUSTIVE:
        if settings.RETRIEVAL == RetrievalMode.EXHAUSTIVE_NO_DEPTH:
            return settings, None
        return (
            settings.derive(RETRIEVAL=RetrievalMode.EXHAUSTIVE_NO_DEPTH),
            "No depth map; retrieval switched to exhaustive-no-depth",
        )
    return settings, "No depth map; every cousin falls back to the upsampled son"


class PipelineService(LoggerMixin):
    """Runs the full test-time training and inference pipeline on one image"""

    def __init__(self, settings: Settings, tracker: Optional[StageTracker] = None):
        self.settings = settings
        self.tracker = tracker or StageTracker()

    def _stage(self, name: str, step: int, steps: int):
        return f"{name}.{step}" if steps > 1 else name

    def _run_step(
        self,
        img: np.ndarray,
        depth: Optional[np.ndarray],
        settings: Settings,
        step: int,
        steps: int,
        kernel: Optional[BlurKernel],
        features_dir: Optional[str]
    ) -> StageOutcome:
        trainer = TrainingService(settings, features_dir, kernel)
        inference = InferenceService(settings)

        name = self._stage("build-database", step, steps)
        with self.tracker.track(name), stage_guard(name):
            context = trainer.prepare(img, depth)

        name = self._stage("mine-triplets", step, steps)
        with self.tracker.track(name), stage_guard(name):
            triplets = trainer.build_training_set(context)

        name = self._stage("train", step, steps)
        with self.tracker.track(name), stage_guard(name):
            net = RZSRNetwork(
                settings.MODE, img.shape[0], settings.CHANNELS, settings.EMBED_DIM,
                settings.NET_DTYPE, settings.SEED,
            )
            training = trainer.train(net, triplets)

        name = self._stage("infer", step, steps)
        with self.tracker.track(name), stage_guard(name):
            result = inference.geometric_ensemble(
                img, depth, net, context.search2, fm=context.pyramid.fm, kernel=kernel,
            )

        name = self._stage("post-process", step, steps)
        with self.tracker.track(name), stage_guard(name):
            output = clamp01(back_project(result.output, img, kernel, settings.BP_ITERS))

        return StageOutcome(
            output=output,
            net=net,
            triplets=len(triplets),
            training_fallbacks=sum(t.used_fallback for t in triplets),
            retrievals=result.retrievals,
            fallbacks=result.fallbacks,
            iterations=training.iterations,
            final_lr=training.final_lr,
            losses=training.records,
            audit=result.audit,
        )

    def super_resolve(
        self,
        img: np.ndarray,
        depth: Optional[np.ndarray] = None,
        kernel: Optional[BlurKernel] = None,
        features_dir: Optional[str] = None
    ) -> SuperResolution:
        """
        Upscale `img` by SCALE

        Factors above 2 repeat the x2 step on its own output; the blur kernel
        and external feature maps only describe the original input and are
        used by the first step alone. Factors that are not powers of two end
        with a bicubic resize to the exact target size.
        """
        img = check_image(img)
        base, warning = effective_settings(self.settings, depth is not None)
        warnings = [warning] if warning else []
        if warning:
            logger.warning(warning)

        steps = cascade_steps(base.SCALE)
        current, current_depth = img, depth
        outcomes: List[StageOutcome] = []
        for step in range(1, steps + 1):
            settings = base
            step_features = features_dir
            if step > 1 and base.DESCRIPTOR == DescriptorBackend.EXTERNAL_FILE:
                settings = base.derive(DESCRIPTOR=DescriptorBackend.GRADIENT_PYRAMID)
                step_features = None
                if step == 2:
                    warnings.append("External features cover the input only; later x2 steps use the gradient pyramid")
                    logger.warning(warnings[-1])
            outcome = self._run_step(
                current, current_depth, settings, step, steps,
                kernel if step == 1 else None, step_features,
            )
            outcomes.append(outcome)
            current = outcome.output
            if current_depth is not None:
                current_depth = resize_bilinear(current_depth, current.shape[1:])

        if 2 ** steps != base.SCALE:
            with self.tracker.track("final-resize"), stage_guard("final-resize"):
                current = clamp01(resize_bicubic(current, Fraction(base.SCALE, 2 ** steps)))

        return SuperResolution(output=current, stages=outcomes, warnings=warnings)

    # =========================================================================
    # ARTIFACTS
    # =========================================================================

    def run_sr(
        self,
        image_path: str,
        output_dir: str,
        depth_path: Optional[str] = None,
        kernel_path: Optional[str] = None,
        features_dir: Optional[str] = None
    ) -> RunManifest:
        """
        Super-resolve one file and write the PNG, traces, checkpoint and manifest

        Returns:
            The manifest written to `output_dir/manifest.json`
        """
        run_id = generate_run_id()
        set_run_context(run_id=run_id)
        settings = self.settings
        out = ensure_dir(output_dir)
        manifest = RunManifest(command="sr", run_id=run_id, config=settings.describe(), seeds={"seed": settings.SEED})

        with self.tracker.track("load-inputs"), stage_guard("load-inputs"):
            img = read_image(image_path)
            manifest.input_hashes["image"] = sha256_file(image_path)
            depth = None
            if depth_path:
                depth = read_depth(depth_path)
                if depth.shape != img.shape[1:]:
                    logger.warning(f"Depth map {depth.shape} resized to the image {img.shape[1:]}")
                    depth = resize_bilinear(depth, img.shape[1:])
                manifest.input_hashes["depth"] = sha256_file(depth_path)
            kernel = None
            if kernel_path:
                kernel = read_kernel(kernel_path)
                manifest.input_hashes["kernel"] = sha256_file(kernel_path)

        result = self.super_resolve(img, depth, kernel, features_dir)

        with self.tracker.track("write-outputs"), stage_guard("write-outputs"):
            stem = Path(image_path).stem
            output_path = write_image(out / f"{stem}_x{settings.SCALE}.png", result.output)
            losses = [record for stage in result.stages for record in stage.losses]
            loss_path = write_csv(out / "loss_trace.csv", losses, LOSS_COLUMNS)
            last = result.stages[-1]
            checkpoint_path = get_checkpoint_repository().save(last.net, out / "model.rznw")
            audit_path = None
            if settings.AUDIT:
                audit = [row for stage in result.stages for row in stage.audit]
                audit_path = str(write_csv(out / "tile_audit.csv", audit, AUDIT_COLUMNS))

            manifest.stages = self.tracker.timings
            manifest.peak_rss_mb = round(self.tracker.peak_rss_mb, 1)
            manifest.triplets = sum(s.triplets for s in result.stages)
            manifest.training_fallbacks = sum(s.training_fallbacks for s in result.stages)
            manifest.retrievals = result.retrievals
            manifest.fallbacks = result.fallbacks
            manifest.fallback_rate = result.fallbacks / result.retrievals if result.retrievals else 0.0
            manifest.iterations = sum(s.iterations for s in result.stages)
            manifest.final_lr = last.final_lr
            manifest.parameter_count = last.net.parameter_count
            manifest.loss_trace_path = str(loss_path)
            manifest.audit_path = audit_path
            manifest.checkpoint_path = str(checkpoint_path)
            manifest.output_path = str(output_path)
            manifest.output_hash = sha256_file(output_path)
            manifest.warnings = result.warnings
            write_json(out / "manifest.json", manifest)

        self.log_operation(
            "sr", output=str(output_path), output_sha256=sha256_array(result.output),
            retrievals=manifest.retrievals, fallbacks=manifest.fallbacks,
        )
        return manifest


# =============================================================================
# ABLATION
# =============================================================================

# (variant, model mode, retrieval)
ABLATION_VARIANTS = [
    ("reference-free", ModelMode.REFERENCE_FREE, RetrievalMode.DATABASE),
    ("single-scale", ModelMode.SINGLE_SCALE, RetrievalMode.DATABASE),
    ("exhaustive-search", ModelMode.FULL, RetrievalMode.EXHAUSTIVE_NO_DEPTH),
    ("database", ModelMode.FULL, RetrievalMode.DATABASE),
]


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    """Crop trailing rows/columns so both sides divide by `scale`"""
    _, height, width = img.shape
    return img[:, :height - height % scale, :width - width % scale].copy()


def find_depth(depth_dir: Optional[str], stem: str) -> Optional[Path]:
    if not depth_dir:
        return None
    for suffix in (".dpt", ".pgm"):
        candidate = Path(depth_dir) / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


class AblationService(LoggerMixin):
    """Runs the four model/retrieval variants over a folder of ground-truth images"""

    def __init__(self, settings: Settings):
        self.settings = settings

    def run(self, input_dir: str, output_dir: str, depth_dir: Optional[str] = None) -> List[AblationRow]:
        """
        Degrade each image bicubically, super-resolve it with every variant
        and score the result against the original

        Returns:
            One row per variant, in a fixed order
        """
        scale = self.settings.SCALE
        out = ensure_dir(output_dir)
        samples = []
        for path in list_images(input_dir):
            hr = modcrop(read_image(path), scale)
            lr = resize_bicubic(hr, Fraction(1, scale))
            depth_path = find_depth(depth_dir, path.stem)
            depth = None
            if depth_path is not None:
                depth = resize_bilinear(read_depth(depth_path), lr.shape[1:])
            samples.append((path.name, hr, lr, depth))

        evaluator = EvaluationService(shave=scale)
        rows: List[AblationRow] = []
        for variant, mode, retrieval in ABLATION_VARIANTS:
            settings = self.settings.derive(MODE=mode, RETRIEVAL=retrieval)
            metrics: List[MetricRow] = []
            start_time = time.perf_counter()
            for filename, hr, lr, depth in samples:
                with stage_guard(f"ablate:{variant}"):
                    result = PipelineService(settings).super_resolve(lr, depth)
                    metrics.append(evaluator.score(filename, result.output, hr))
            runtime = time.perf_counter() - start_time
            self.log_performance(f"ablate:{variant}", runtime * 1000, images=len(metrics))
            report = summarize(metrics, scale, settings.describe())
            write_csv(out / f"metrics_{variant}.csv", metrics, METRIC_COLUMNS)
            rows.append(AblationRow(
                variant=variant, mode=mode.value, retrieval=retrieval.value,
                mean_psnr_db=report.mean_psnr_db, mean_ssim=report.mean_ssim,
                runtime_seconds=runtime, images=len(metrics),
            ))
            self.log_info(
                f"Variant {variant}: PSNR {report.mean_psnr_db}, SSIM {report.mean_ssim}",
                variant=variant, runtime_seconds=round(runtime, 2),
            )

        write_csv(out / "ablation.csv", rows, ABLATION_COLUMNS)
        write_json(out / "ablation.json", {"config": self.settings.describe(), "rows": [r.model_dump(mode="json") for r in rows]})
        return rows
