"""
Structured Logging Configuration
JSON or human-readable logging for super-resolution runs, correlated by run id and stage
"""
import json
import logging
import logging.config
import sys
import time
import uuid
from contextvars import ContextVar
from datetime import datetime, timezone
from functools import wraps
from typing import Optional

# Context variables for run tracking
run_id_var: ContextVar[Optional[str]] = ContextVar('run_id', default=None)
stage_var: ContextVar[Optional[str]] = ContextVar('stage', default=None)

_RESERVED_ATTRS = frozenset({
    'name', 'msg', 'args', 'levelname', 'levelno', 'pathname', 'filename',
    'module', 'lineno', 'funcName', 'created', 'msecs', 'relativeCreated',
    'thread', 'threadName', 'processName', 'process', 'getMessage', 'exc_info',
    'exc_text', 'stack_info', 'taskName', 'message', 'asctime',
})


class EnhancedStructuredFormatter(logging.Formatter):
    """
    Formatter emitting one JSON object per record, with run correlation
    """

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as structured JSON"""
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "severity": record.levelname,
            "message": record.getMessage(),
            "logger": record.name,
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }

        run_id = run_id_var.get()
        stage = stage_var.get()
        if run_id:
            log_entry["run_id"] = run_id
        if stage:
            log_entry["stage"] = stage

        if record.exc_info:
            log_entry["exception"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": self.formatException(record.exc_info),
            }

        extra_fields = {
            key: value for key, value in record.__dict__.items()
            if key not in _RESERVED_ATTRS
        }
        if extra_fields:
            log_entry["extra"] = extra_fields

        if hasattr(record, 'duration'):
            log_entry["performance"] = {
                "duration_ms": record.duration,
                "slow_stage": record.duration > 60_000,
            }

        return json.dumps(log_entry, default=str)


def setup_logging(log_level: str = "INFO", json_logs: bool = False) -> None:
    """
    Install the logging configuration for the rzsr package

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        json_logs: Emit structured JSON instead of the detailed text format
    """
    log_level = log_level.upper()
    is_debug = log_level == "DEBUG"

    logging_config = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "enhanced_structured": {
                "()": EnhancedStructuredFormatter,
            },
            "detailed": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(module)s:%(funcName)s:%(lineno)d - %(message)s"
            },
        },
        "handlers": {
            "console": {
                "class": "logging.StreamHandler",
                "level": log_level,
                "formatter": "enhanced_structured" if json_logs else "detailed",
                "stream": sys.stderr,
            },
        },
        "root": {
            "level": "WARNING",
            "handlers": ["console"],
        },
        "loggers": {
            "rzsr": {
                "level": log_level,
                "handlers": ["console"],
                "propagate": False,
            },
            "rzsr.network": {
                "level": "DEBUG" if is_debug else "INFO",
                "propagate": True,
            },
            "PIL": {
                "level": "WARNING",
                "propagate": True,
            },
        },
    }

    logging.config.dictConfig(logging_config)
    get_logger(__name__).debug(f"Logging configured - Level: {log_level}, JSON: {json_logs}")


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance with the specified name

    Args:
        name: Logger name (usually __name__)

    Returns:
        Logger instance
    """
    return logging.getLogger(name)


def generate_run_id() -> str:
    """Generate a unique run ID"""
    return uuid.uuid4().hex[:12]


def set_run_context(run_id: str = None, stage: str = None):
    """
    Set run context for log correlation

    Args:
        run_id: Identifier of the current experiment run
        stage: Pipeline stage being executed
    """
    if run_id:
        run_id_var.set(run_id)
    if stage:
        stage_var.set(stage)


def clear_run_context():
    """Clear run context"""
    run_id_var.set(None)
    stage_var.set(None)


class LoggerMixin:
    """
    Mixin adding contextual logging helpers to any class
    """

    @property
    def logger(self) -> logging.Logger:
        return get_logger(self.__class__.__module__ + "." + self.__class__.__name__)

    def log_operation(self, operation: str, level: str = "INFO", **kwargs) -> None:
        """Log an operation with additional context"""
        extra = {"operation": operation}
        extra.update(kwargs)
        self.logger.log(getattr(logging, level.upper(), logging.INFO), f"Operation: {operation}", extra=extra)

    def log_performance(self, operation: str, duration_ms: float, **kwargs) -> None:
        """Log a timing measurement"""
        extra = {"operation": operation, "duration": duration_ms}
        extra.update(kwargs)
        self.logger.info(f"Performance: {operation} took {duration_ms:.2f}ms", extra=extra)

    def log_debug(self, message: str, **kwargs) -> None:
        self.logger.debug(message, extra=kwargs)

    def log_info(self, message: str, **kwargs) -> None:
        self.logger.info(message, extra=kwargs)

    def log_warning(self, message: str, **kwargs) -> None:
        self.logger.warning(message, extra=kwargs)


def log_function_call(include_args: bool = False):
    """
    Decorator to log function calls with timing

    Args:
        include_args: Whether to include function arguments in logs
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger(func.__module__)
            start_time = time.perf_counter()
            log_data = {
                "function_name": func.__name__,
                "operation": f"{func.__module__}.{func.__name__}",
            }
            if include_args:
                log_data["call_args"] = str(args)[:500]
                log_data["call_kwargs"] = str(kwargs)[:500]

            logger.debug(f"Entering function: {func.__name__}", extra=log_data)
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                log_data["duration"] = (time.perf_counter() - start_time) * 1000
                log_data["status"] = "error"
                log_data["error_type"] = type(e).__name__
                logger.error(
                    f"Function failed: {func.__name__} ({log_data['duration']:.2f}ms) - {e}",
                    exc_info=logger.isEnabledFor(logging.DEBUG),
                    extra=log_data,
                )
                raise

            log_data["duration"] = (time.perf_counter() - start_time) * 1000
            log_data["status"] = "success"
            logger.debug(
                f"Function completed: {func.__name__} ({log_data['duration']:.2f}ms)",
                extra=log_data,
            )
            return result

        return wrapper

    return decorator
