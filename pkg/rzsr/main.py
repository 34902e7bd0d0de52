"""
RZSR Command Line Entry Point
Zero-shot super-resolution with depth-guided self-exemplars
"""
import argparse
import sys
from typing import Any, Dict, List, Optional

from rzsr.cli import commands
from rzsr.core.config import load_settings
from rzsr.core.error_handlers import ConfigurationError, RZSRError, UsageError, get_error_handler
from rzsr.core.logging_config import clear_run_context, get_logger, setup_logging
from rzsr.models.schemas import DegradationMode, DescriptorBackend, ModelMode, RetrievalMode

logger = get_logger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage problems raised instead of exiting with status 2"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _settings_options() -> argparse.ArgumentParser:
    parent = ArgumentParser(add_help=False)
    group = parent.add_argument_group("settings")
    group.add_argument("--config", help="key=value settings file")
    group.add_argument("--scale", type=int, help="Upscaling factor (default 2)")
    group.add_argument("--depth-bins", "-D", type=int, dest="depth_bins", help="Depth ranges D (default 5)")
    group.add_argument("--threshold", "-T", type=float, help="Cousin distance threshold T (default 0.9)")
    group.add_argument("--patch-side", "-M", type=int, dest="patch_side", help="LR patch side M (default 48)")
    group.add_argument("--stride", type=int, help="Inference tile stride (default 4)")
    group.add_argument("--mode", choices=[m.value for m in ModelMode])
    group.add_argument("--retrieval", choices=[r.value for r in RetrievalMode])
    group.add_argument("--descriptor", choices=[d.value for d in DescriptorBackend])
    group.add_argument("--ensemble", action="store_true", default=None, help="Dihedral test-time ensemble")
    group.add_argument("--bp-iters", type=int, dest="bp_iters", help="Back-projection iterations (default 8)")
    group.add_argument("--max-iters", type=int, dest="max_iters", help="Training iteration cap (default 3000)")
    group.add_argument("--lr", type=float, help="Initial learning rate (default 0.001)")
    group.add_argument("--seed", type=int)
    group.add_argument("--audit", action="store_true", default=None, help="Write the per-tile retrieval audit")
    group.add_argument("--no-progress", action="store_false", default=None, dest="show_progress")
    group.add_argument("--log-level", dest="log_level")
    group.add_argument("--log-json", action="store_const", const="json", dest="log_format")
    return parent


SETTINGS_FLAGS = {
    "scale": "SCALE",
    "depth_bins": "DEPTH_BINS",
    "threshold": "THRESHOLD",
    "patch_side": "PATCH_SIDE",
    "stride": "TILE_STRIDE",
    "mode": "MODE",
    "retrieval": "RETRIEVAL",
    "descriptor": "DESCRIPTOR",
    "ensemble": "ENSEMBLE",
    "bp_iters": "BP_ITERS",
    "max_iters": "MAX_ITERS",
    "lr": "LEARNING_RATE",
    "seed": "SEED",
    "audit": "AUDIT",
    "show_progress": "SHOW_PROGRESS",
    "log_level": "LOG_LEVEL",
    "log_format": "LOG_FORMAT",
}


def build_parser() -> ArgumentParser:
    parent = _settings_options()
    parser = ArgumentParser(prog="rzsr", description="Zero-shot super-resolution with depth-guided self-exemplars")
    sub = parser.add_subparsers(dest="command", required=True)

    sr = sub.add_parser("sr", parents=[parent], help="Super-resolve one image")
    sr.add_argument("--image")
    sr.add_argument("--depth", help="Depth map (.pgm or .dpt)")
    sr.add_argument("--kernel", help="Blur kernel file (blind setting)")
    sr.add_argument("--features", help="Directory of external .fmap feature maps")
    sr.add_argument("--output", help="Output directory")
    sr.set_defaults(handler=commands.cmd_sr)

    degrade = sub.add_parser("degrade", parents=[parent], help="Synthesize an LR set")
    degrade.add_argument("--input-dir", dest="input_dir")
    degrade.add_argument("--output")
    degrade.add_argument("--degradation", choices=[m.value for m in DegradationMode], default=DegradationMode.BICUBIC.value)
    degrade.add_argument("--factor", type=int)
    degrade.add_argument("--kernel")
    degrade.set_defaults(handler=commands.cmd_degrade)

    evaluate = sub.add_parser("eval", parents=[parent], help="Y-channel PSNR / SSIM")
    evaluate.add_argument("--sr", help="SR image or folder")
    evaluate.add_argument("--hr", help="Ground-truth image or folder")
    evaluate.add_argument("--shave", type=int, help="Border pixels ignored (default: scale)")
    evaluate.add_argument("--output")
    evaluate.set_defaults(handler=commands.cmd_eval)

    build_db = sub.add_parser("build-db", parents=[parent], help="Serialize the patch databases of one image")
    build_db.add_argument("--image")
    build_db.add_argument("--depth")
    build_db.add_argument("--kernel")
    build_db.add_argument("--features")
    build_db.add_argument("--output")
    build_db.set_defaults(handler=commands.cmd_build_db)

    ablate = sub.add_parser("ablate", parents=[parent], help="Compare model and retrieval variants")
    ablate.add_argument("--input-dir", dest="input_dir", help="Folder of ground-truth PNGs")
    ablate.add_argument("--depth-dir", dest="depth_dir")
    ablate.add_argument("--output")
    ablate.set_defaults(handler=commands.cmd_ablate)

    kernel_gen = sub.add_parser("kernel-gen", parents=[parent], help="Write random blur kernels")
    kernel_gen.add_argument("--count", type=int, default=1)
    kernel_gen.add_argument("--size", type=int, default=11)
    kernel_gen.add_argument("--output")
    kernel_gen.set_defaults(handler=commands.cmd_kernel_gen)
    return parser


def settings_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {field: getattr(args, flag, None) for flag, field in SETTINGS_FLAGS.items()}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map failures to exit codes"""
    handler = get_error_handler()
    try:
        args = build_parser().parse_args(argv)
        try:
            settings = load_settings(args.config, settings_overrides(args))
        except ConfigurationError as e:
            raise UsageError(e.message, e.error_code, e.details) from e
        setup_logging(settings.LOG_LEVEL, settings.LOG_FORMAT == "json")
        return args.handler(args, settings)
    except RZSRError as e:
        handler.log_error(e, {"command": sys.argv[1] if argv is None and len(sys.argv) > 1 else None})
        print(f"error: {e.message}", file=sys.stderr)
        return handler.exit_code_for(e)
    except Exception as e:
        handler.log_error(e)
        print(f"error: {e}", file=sys.stderr)
        return handler.exit_code_for(e)
    finally:
        clear_run_context()


if __name__ == "__main__":
    sys.exit(main())
