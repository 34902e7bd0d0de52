"""
Centralized Error Handling
Error taxonomy for the super-resolution toolkit, consistent logging and CLI exit codes
"""
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

from rzsr.core.logging_config import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class RZSRError(Exception):
    """Base error with structured information"""

    default_code = "RZSR_ERROR"
    exit_code = EXIT_RUNTIME

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.error_code = error_code or self.default_code
        self.details = details or {}
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": self.message,
            "error_code": self.error_code,
            "details": self.details,
        }


class ConfigurationError(RZSRError):
    default_code = "CONFIGURATION_ERROR"


class UsageError(RZSRError):
    default_code = "USAGE_ERROR"
    exit_code = EXIT_USAGE


class ShapeError(RZSRError):
    default_code = "SHAPE_ERROR"


class BoundsError(RZSRError):
    default_code = "BOUNDS_ERROR"


class InvalidScaleError(RZSRError):
    default_code = "INVALID_SCALE"


class DegenerateInputError(RZSRError):
    default_code = "DEGENERATE_INPUT"


class ChannelCountError(RZSRError):
    default_code = "CHANNEL_COUNT"


class FeatureLoadError(RZSRError):
    default_code = "FEATURE_LOAD_ERROR"


class FileFormatError(RZSRError):
    """Unreadable or malformed input/artifact file; details name the file"""
    default_code = "FILE_FORMAT_ERROR"


class ModeError(RZSRError):
    default_code = "MODE_ERROR"


class TrainingDivergedError(RZSRError):
    default_code = "TRAINING_DIVERGED"


class PipelineError(RZSRError):
    """A pipeline stage failed; `stage` names it"""

    default_code = "PIPELINE_ERROR"

    def __init__(
        self,
        message: str,
        stage: Optional[str] = None,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        details = dict(details or {})
        if stage:
            details.setdefault("stage", stage)
        self.stage = stage
        super().__init__(message, error_code, details)


class ErrorHandler:
    """Centralized error logging"""

    @staticmethod
    def log_error(
        error: Exception,
        additional_context: Optional[Dict[str, Any]] = None
    ) -> None:
        """Log error with context"""
        context = {
            "error_type": type(error).__name__,
            "error_message": str(error),
        }
        if isinstance(error, RZSRError):
            context["error_code"] = error.error_code
            context["error_details"] = error.details
        if additional_context:
            context.update(additional_context)

        if isinstance(error, RZSRError):
            logger.warning(f"RZSR error: {error}", extra=context)
        else:
            logger.error("Unexpected error occurred", extra=context, exc_info=True)

    @staticmethod
    def exit_code_for(error: Exception) -> int:
        if isinstance(error, RZSRError):
            return error.exit_code
        return EXIT_RUNTIME


error_handler = ErrorHandler()


class CommonErrors:
    """Frequently raised errors with consistent codes"""

    @staticmethod
    def file_not_found(path: Any, what: str = "File") -> FileFormatError:
        return FileFormatError(
            message=f"{what} not found: {path}",
            error_code="FILE_NOT_FOUND",
            details={"path": str(path)}
        )

    @staticmethod
    def bad_file(path: Any, reason: str) -> FileFormatError:
        return FileFormatError(
            message=f"Cannot read {path}: {reason}",
            details={"path": str(path), "reason": reason}
        )

    @staticmethod
    def channel_mismatch(expected: int, actual: int, where: str) -> ShapeError:
        return ShapeError(
            message=f"{where}: expected {expected} channels, got {actual}",
            details={"expected": expected, "actual": actual, "where": where}
        )

    @staticmethod
    def out_of_bounds(center: Any, side: int, shape: Any) -> BoundsError:
        return BoundsError(
            message=f"Window of side {side} at {tuple(center)} exceeds bounds {tuple(shape)}",
            details={"center": list(center), "side": side, "shape": list(shape)}
        )


@contextmanager
def stage_guard(stage: str) -> Iterator[None]:
    """
    Re-raise any failure inside a pipeline stage as a PipelineError naming the stage

    Args:
        stage: Stage name recorded in the error
    """
    try:
        yield
    except PipelineError:
        raise
    except UsageError:
        raise
    except RZSRError as e:
        details = dict(e.details)
        details["cause"] = type(e).__name__
        raise PipelineError(f"Stage '{stage}' failed: {e.message}", stage, e.error_code, details) from e
    except Exception as e:
        raise PipelineError(
            f"Stage '{stage}' failed: {e}",
            stage,
            details={"cause": type(e).__name__},
        ) from e


def get_error_handler() -> ErrorHandler:
    """Get error handler instance"""
    return error_handler
