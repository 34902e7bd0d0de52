"""
CLI Commands
One function per subcommand; each takes parsed arguments plus resolved
settings and returns a process exit code
"""
from argparse import Namespace
from pathlib import Path
from typing import Optional

from rzsr.core.config import Settings
from rzsr.core.error_handlers import EXIT_OK, CommonErrors, UsageError, stage_guard
from rzsr.core.logging_config import generate_run_id, get_logger, log_function_call, set_run_context
from rzsr.database.patch_repository import get_patch_repository
from rzsr.models.dto import DatabaseManifest
from rzsr.models.schemas import DegradationMode, DegradationSpec, RetrievalMode
from rzsr.services.degradation_service import DegradationService
from rzsr.services.evaluation_service import EvaluationService, summarize
from rzsr.services.pipeline_service import (
    ABLATION_COLUMNS, METRIC_COLUMNS, AblationService, PipelineService
)
from rzsr.services.training_service import TrainingService
from rzsr.utils.helpers import ensure_dir, write_csv, write_json
from rzsr.utils.image_io import read_depth, read_image, read_kernel, sha256_file
from rzsr.utils.image_ops import resize_bilinear

logger = get_logger(__name__)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise UsageError(f"{flag} is required", details={"flag": flag})
    return value


def _require_path(value: Optional[str], flag: str, directory: bool = False) -> str:
    value = _require(value, flag)
    path = Path(value)
    if directory and not path.is_dir():
        raise CommonErrors.file_not_found(path, f"Directory for {flag}")
    if not directory and not path.is_file():
        raise CommonErrors.file_not_found(path, f"File for {flag}")
    return value


@log_function_call(include_args=True)
def cmd_sr(args: Namespace, settings: Settings) -> int:
    """Super-resolve one image and write the PNG with its manifest"""
    image = _require_path(args.image or settings.IMAGE_PATH, "--image")
    depth = args.depth or settings.DEPTH_PATH
    kernel = args.kernel or settings.KERNEL_PATH
    features = args.features or settings.FEATURES_PATH
    if depth:
        _require_path(depth, "--depth")
    if kernel:
        _require_path(kernel, "--kernel")
    output_dir = args.output or settings.OUTPUT_DIR

    manifest = PipelineService(settings).run_sr(image, output_dir, depth, kernel, features)
    print(manifest.output_path)
    return EXIT_OK


@log_function_call(include_args=True)
def cmd_degrade(args: Namespace, settings: Settings) -> int:
    """Write an LR set for every PNG of a folder"""
    input_dir = _require_path(args.input_dir, "--input-dir", directory=True)
    output_dir = _require(args.output or settings.OUTPUT_DIR, "--output")
    mode = DegradationMode(args.degradation)
    kernel_path = args.kernel or settings.KERNEL_PATH
    if mode == DegradationMode.FILE_KERNEL:
        kernel_path = _require_path(kernel_path, "--kernel")
    spec = DegradationSpec(
        mode=mode,
        factor=args.factor or settings.SCALE,
        seed=settings.SEED,
        noise_sigma=settings.NOISE_SIGMA,
        kernel_path=kernel_path,
    )
    manifest = DegradationService(spec, settings.describe()).degrade_directory(input_dir, output_dir)
    print(f"{len(manifest.entries)} images -> {output_dir}")
    return EXIT_OK


@log_function_call(include_args=True)
def cmd_eval(args: Namespace, settings: Settings) -> int:
    """Score SR outputs against ground truth (files or folders)"""
    sr = _require(args.sr, "--sr")
    hr = _require(args.hr, "--hr")
    shave = settings.SCALE if args.shave is None else args.shave
    evaluator = EvaluationService(shave=shave)
    config = {**settings.describe(), "shave": shave}

    if Path(sr).is_dir():
        _require_path(hr, "--hr", directory=True)
        report = evaluator.evaluate_directories(sr, hr, config)
    else:
        _require_path(sr, "--sr")
        _require_path(hr, "--hr")
        row = evaluator.score(Path(sr).name, read_image(sr), read_image(hr))
        report = summarize([row], shave, config)

    out = ensure_dir(args.output or settings.OUTPUT_DIR)
    write_csv(out / "metrics.csv", report.rows, METRIC_COLUMNS)
    write_json(out / "metrics.json", report)
    for row in report.rows:
        print(f"{row.filename}\t{row.psnr_db:.4f}\t{row.ssim:.4f}")
    return EXIT_OK


@log_function_call(include_args=True)
def cmd_build_db(args: Namespace, settings: Settings) -> int:
    """Build and serialize the half- and quarter-scale databases of one image"""
    image = _require_path(args.image or settings.IMAGE_PATH, "--image")
    depth_path = args.depth or settings.DEPTH_PATH
    kernel_path = args.kernel or settings.KERNEL_PATH
    out = ensure_dir(args.output or settings.OUTPUT_DIR)
    run_id = generate_run_id()
    set_run_context(run_id=run_id, stage="build-database")
    manifest = DatabaseManifest(
        run_id=run_id, config=settings.describe(), seeds={"seed": settings.SEED},
        depth_bins=settings.DEPTH_BINS, patch_side=settings.PATCH_SIDE,
    )

    with stage_guard("build-database"):
        img = read_image(image)
        manifest.input_hashes["image"] = sha256_file(image)
        depth = None
        if depth_path:
            depth = resize_bilinear(read_depth(_require_path(depth_path, "--depth")), img.shape[1:])
            manifest.input_hashes["depth"] = sha256_file(depth_path)
        else:
            logger.warning("No depth map; every entry lands in one depth bin")
        kernel = None
        if kernel_path:
            kernel = read_kernel(_require_path(kernel_path, "--kernel"))
            manifest.input_hashes["kernel"] = sha256_file(kernel_path)
        trainer = TrainingService(
            settings.derive(RETRIEVAL=RetrievalMode.DATABASE),
            args.features or settings.FEATURES_PATH,
            kernel,
        )
        context = trainer.prepare(img, depth)

    repository = get_patch_repository()
    for name, db in (("theta_x2", context.db2), ("theta_x4", context.search4)):
        path = repository.save(db, out / f"{name}.rzdb")
        manifest.files[name] = str(path)
        manifest.entries[name] = len(db)
    write_json(out / "manifest.json", manifest)
    print(f"{len(context.db2)} / {len(context.search4)} entries -> {out}")
    return EXIT_OK


@log_function_call(include_args=True)
def cmd_ablate(args: Namespace, settings: Settings) -> int:
    """Compare the four model/retrieval variants on a folder"""
    input_dir = _require_path(args.input_dir, "--input-dir", directory=True)
    if args.depth_dir:
        _require_path(args.depth_dir, "--depth-dir", directory=True)
    output_dir = args.output or settings.OUTPUT_DIR
    set_run_context(run_id=generate_run_id())
    rows = AblationService(settings).run(input_dir, output_dir, args.depth_dir)
    print("\t".join(ABLATION_COLUMNS))
    for row in rows:
        values = row.model_dump()
        print("\t".join(str(values[column]) for column in ABLATION_COLUMNS))
    return EXIT_OK


@log_function_call(include_args=True)
def cmd_kernel_gen(args: Namespace, settings: Settings) -> int:
    """Write random anisotropic Gaussian kernels"""
    if args.count < 1:
        raise UsageError("--count must be at least 1", details={"count": args.count})
    if args.size < 1 or args.size % 2 == 0:
        raise UsageError("--size must be a positive odd number", details={"size": args.size})
    spec = DegradationSpec(mode=DegradationMode.RANDOM_KERNEL, seed=settings.SEED, kernel_size=args.size)
    output_dir = args.output or settings.OUTPUT_DIR
    manifest = DegradationService(spec, settings.describe()).generate_kernels(args.count, output_dir)
    print(f"{manifest.count} kernels -> {output_dir}")
    return EXIT_OK
