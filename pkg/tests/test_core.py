"""
Tests for settings loading, the error taxonomy, structured logging and stage timing
"""
import json
import logging

import pytest

from rzsr.core.config import (
    Settings, build_settings, get_settings, load_settings, normalize_key, read_config_file
)
from rzsr.core.error_handlers import (
    EXIT_RUNTIME, EXIT_USAGE, BoundsError, CommonErrors, ConfigurationError, PipelineError,
    UsageError, get_error_handler, stage_guard
)
from rzsr.core.logging_config import (
    EnhancedStructuredFormatter, clear_run_context, generate_run_id, log_function_call,
    set_run_context, stage_var
)
from rzsr.models.schemas import ModelMode, RetrievalMode
from rzsr.services.performance_service import StageTracker


@pytest.fixture(autouse=True)
def _clean_context():
    clear_run_context()
    yield
    clear_run_context()


class TestSettings:
    def test_defaults(self):
        settings = build_settings()
        assert settings.SCALE == 2
        assert settings.DEPTH_BINS == 5
        assert settings.THRESHOLD == 0.9
        assert settings.PATCH_SIDE == 48
        assert settings.TILE_STRIDE == 4
        assert settings.LEARNING_RATE == 0.001
        assert settings.RETRIEVAL == RetrievalMode.DATABASE
        assert settings.MODE == ModelMode.FULL
        assert settings.ENSEMBLE is False
        assert settings.CLUSTER_DIVISOR == 100
        assert settings.MIN_BIN_MEDOIDS == 1

    def test_aliases(self):
        assert normalize_key("d") == "DEPTH_BINS"
        assert normalize_key("patch-side") == "PATCH_SIDE"
        settings = build_settings({"T": 0.5, "M": 24, "lr": 0.01})
        assert settings.THRESHOLD == 0.5
        assert settings.PATCH_SIDE == 24
        assert settings.LEARNING_RATE == 0.01

    @pytest.mark.parametrize("side", [4, 30, 50])
    def test_patch_side_must_be_multiple_of_four(self, side):
        with pytest.raises(ConfigurationError) as exc:
            build_settings({"PATCH_SIDE": side})
        assert exc.value.details["validation_errors"][0]["field"] == "PATCH_SIDE"

    def test_odd_database_stride_rejected(self):
        with pytest.raises(ConfigurationError):
            build_settings({"DB_STRIDE": 3})

    def test_log_level_normalized(self):
        assert build_settings({"LOG_LEVEL": "debug"}).LOG_LEVEL == "DEBUG"
        with pytest.raises(ConfigurationError):
            build_settings({"LOG_LEVEL": "chatty"})

    def test_derive_keeps_other_fields(self):
        base = build_settings({"DEPTH_BINS": 3})
        derived = base.derive(RETRIEVAL=RetrievalMode.EXHAUSTIVE)
        assert derived.DEPTH_BINS == 3
        assert derived.RETRIEVAL == RetrievalMode.EXHAUSTIVE
        assert base.RETRIEVAL == RetrievalMode.DATABASE

    def test_get_settings_reads_defaults(self):
        assert isinstance(get_settings(), Settings)

    def test_describe_is_json_ready(self):
        described = build_settings().describe()
        assert described["RETRIEVAL"] == "database"
        json.dumps(described)


class TestConfigFile:
    def test_read_with_aliases(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("D=3\nT=0.7\nmode=reference-free\n# comment\n")
        values = read_config_file(path)
        assert values == {"DEPTH_BINS": "3", "THRESHOLD": "0.7", "MODE": "reference-free"}
        settings = load_settings(path)
        assert settings.DEPTH_BINS == 3
        assert settings.MODE == ModelMode.REFERENCE_FREE

    def test_command_line_overrides_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("T=0.7\nSCALE=4\n")
        settings = load_settings(path, {"THRESHOLD": 0.2, "SCALE": None})
        assert settings.THRESHOLD == 0.2
        assert settings.SCALE == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            read_config_file(tmp_path / "absent.cfg")

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("WIDGETS=3\n")
        with pytest.raises(ConfigurationError) as exc:
            read_config_file(path)
        assert exc.value.details["key"] == "WIDGETS"

    def test_bad_value(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("D=lots\n")
        with pytest.raises(ConfigurationError):
            load_settings(path)


class TestErrors:
    def test_exit_codes(self):
        handler = get_error_handler()
        assert handler.exit_code_for(UsageError("bad flag")) == EXIT_USAGE
        assert handler.exit_code_for(ConfigurationError("bad value")) == EXIT_RUNTIME
        assert handler.exit_code_for(RuntimeError("boom")) == EXIT_RUNTIME

    def test_to_dict(self):
        error = CommonErrors.out_of_bounds((3, 4), 8, (1, 16, 16))
        assert isinstance(error, BoundsError)
        payload = error.to_dict()
        assert payload["error_code"] == "BOUNDS_ERROR"
        assert payload["details"]["side"] == 8

    def test_file_not_found_code(self, tmp_path):
        error = CommonErrors.file_not_found(tmp_path / "x.png", "Image")
        assert error.error_code == "FILE_NOT_FOUND"
        assert "Image not found" in error.message

    def test_stage_guard_wraps_domain_errors(self):
        with pytest.raises(PipelineError) as exc:
            with stage_guard("train"):
                raise CommonErrors.channel_mismatch(3, 1, "network input")
        assert exc.value.stage == "train"
        assert exc.value.error_code == "SHAPE_ERROR"
        assert exc.value.details["cause"] == "ShapeError"
        assert exc.value.details["stage"] == "train"

    def test_stage_guard_wraps_foreign_errors(self):
        with pytest.raises(PipelineError) as exc:
            with stage_guard("infer"):
                raise ZeroDivisionError("division by zero")
        assert exc.value.details["cause"] == "ZeroDivisionError"
        assert isinstance(exc.value.__cause__, ZeroDivisionError)

    def test_stage_guard_keeps_inner_stage(self):
        with pytest.raises(PipelineError) as exc:
            with stage_guard("outer"):
                with stage_guard("inner"):
                    raise ValueError("x")
        assert exc.value.stage == "inner"

    def test_stage_guard_passes_usage_errors(self):
        with pytest.raises(UsageError):
            with stage_guard("load-inputs"):
                raise UsageError("--image is required")


def _record(message="hello", **extra):
    record = logging.LogRecord("rzsr.test", logging.INFO, __file__, 10, message, None, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


class TestStructuredLogging:
    def test_run_context_in_json(self):
        run_id = generate_run_id()
        assert len(run_id) == 12
        set_run_context(run_id=run_id, stage="train")
        entry = json.loads(EnhancedStructuredFormatter().format(_record()))
        assert entry["message"] == "hello"
        assert entry["severity"] == "INFO"
        assert entry["run_id"] == run_id
        assert entry["stage"] == "train"

    def test_extra_and_performance(self):
        entry = json.loads(EnhancedStructuredFormatter().format(_record(duration=1500.0, iterations=7)))
        assert entry["extra"]["iterations"] == 7
        assert entry["performance"] == {"duration_ms": 1500.0, "slow_stage": False}
        assert "run_id" not in entry

    def test_log_function_call_preserves_result_and_errors(self):
        @log_function_call(include_args=True)
        def halve(x):
            if x < 0:
                raise ValueError("negative")
            return x / 2

        assert halve(4) == 2
        assert halve.__name__ == "halve"
        with pytest.raises(ValueError):
            halve(-1)


class TestStageTracker:
    def test_records_success_and_failure(self):
        tracker = StageTracker()
        with tracker.track("build-database"):
            assert stage_var.get() == "build-database"
        with pytest.raises(RuntimeError):
            with tracker.track("train"):
                raise RuntimeError("diverged")

        timings = tracker.timings
        assert [t.stage for t in timings] == ["build-database", "train"]
        assert timings[0].success and not timings[1].success
        assert timings[1].error == "diverged"
        assert stage_var.get() is None
        assert tracker.peak_rss_mb > 0

    def test_summary_accumulates_repeats(self):
        tracker = StageTracker()
        for _ in range(3):
            with tracker.track("infer"):
                pass
        summary = tracker.summary()
        assert list(summary) == ["infer"]
        assert summary["infer"] == pytest.approx(tracker.total_seconds())
