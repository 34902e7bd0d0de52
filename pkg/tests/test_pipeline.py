"""
Tests for the end-to-end pipeline, run artifacts and the ablation driver
"""
import json

import numpy as np
import pytest

from rzsr.database.checkpoint_repository import get_checkpoint_repository
from rzsr.models.schemas import ModelMode, NoDepthPolicy, RetrievalMode
from rzsr.network.model import RZSRNetwork
from rzsr.services.evaluation_service import psnr_y
from rzsr.services.pipeline_service import (
    ABLATION_VARIANTS, AblationService, PipelineService, cascade_steps, effective_settings,
    find_depth, modcrop
)
from rzsr.utils.helpers import read_csv
from rzsr.utils.image_io import read_image, sha256_file, write_depth_dpt, write_image
from rzsr.utils.image_ops import clamp01, resize_bicubic
from rzsr.utils.synthetic import PATTERNS, brick, checker, ramp_depth


@pytest.fixture
def sr_settings(tiny_settings):
    return tiny_settings(PATCH_SIDE=8, THRESHOLD=2.0)


class TestCascade:
    @pytest.mark.parametrize("scale, steps", [(2, 1), (3, 2), (4, 2), (8, 3)])
    def test_steps(self, scale, steps):
        assert cascade_steps(scale) == steps

    def test_modcrop(self, random_image):
        cropped = modcrop(random_image(13, 10), 4)
        assert cropped.shape == (3, 12, 8)

    def test_find_depth_prefers_dpt(self, tmp_path):
        write_depth_dpt(tmp_path / "a.dpt", ramp_depth(4, 4))
        (tmp_path / "a.pgm").write_bytes(b"")
        assert find_depth(str(tmp_path), "a").suffix == ".dpt"
        assert find_depth(str(tmp_path), "b") is None
        assert find_depth(None, "a") is None


class TestMissingDepth:
    def test_depth_given_keeps_settings(self, sr_settings):
        settings, warning = effective_settings(sr_settings, True)
        assert settings is sr_settings and warning is None

    def test_exhaustive_policy_switches_retrieval(self, sr_settings):
        settings, warning = effective_settings(sr_settings, False)
        assert settings.RETRIEVAL == RetrievalMode.EXHAUSTIVE_NO_DEPTH
        assert "exhaustive-no-depth" in warning

    def test_fallback_policy_keeps_database(self, tiny_settings):
        base = tiny_settings(NO_DEPTH_POLICY=NoDepthPolicy.FALLBACK)
        settings, warning = effective_settings(base, False)
        assert settings.RETRIEVAL == RetrievalMode.DATABASE
        assert "falls back" in warning

    def test_reference_free_needs_no_depth(self, tiny_settings):
        base = tiny_settings(MODE=ModelMode.REFERENCE_FREE)
        assert effective_settings(base, False) == (base, None)


@pytest.mark.slow
class TestSuperResolve:
    def test_x2_output(self, sr_settings):
        lr = brick(48)
        result = PipelineService(sr_settings).super_resolve(lr, ramp_depth(48, 48))
        assert result.output.shape == (3, 96, 96)
        assert result.output.min() >= 0.0 and result.output.max() <= 1.0
        assert len(result.stages) == 1
        assert result.retrievals > 0
        assert 0 <= result.fallbacks <= result.retrievals
        assert result.warnings == []

    def test_deterministic(self, sr_settings):
        lr, depth = checker(48), ramp_depth(48, 48)
        first = PipelineService(sr_settings).super_resolve(lr, depth).output
        second = PipelineService(sr_settings).super_resolve(lr, depth).output
        np.testing.assert_array_equal(first, second)

    def test_non_power_of_two_scale(self, tiny_settings):
        settings = tiny_settings(PATCH_SIDE=8, SCALE=3, MAX_ITERS=3)
        result = PipelineService(settings).super_resolve(brick(32), ramp_depth(32, 32))
        assert result.output.shape == (3, 96, 96)
        assert len(result.stages) == 2

    def test_without_depth_reports_warning(self, sr_settings):
        result = PipelineService(sr_settings).super_resolve(brick(48))
        assert result.output.shape == (3, 96, 96)
        assert any("exhaustive-no-depth" in w for w in result.warnings)


@pytest.mark.slow
class TestRunArtifacts:
    def test_run_sr_writes_everything(self, tmp_path, tiny_settings):
        settings = tiny_settings(PATCH_SIDE=8, AUDIT=True)
        image_path = write_image(tmp_path / "brick.png", brick(48))
        depth_path = write_depth_dpt(tmp_path / "brick.dpt", ramp_depth(48, 48))
        out = tmp_path / "run"

        manifest = PipelineService(settings).run_sr(str(image_path), str(out), str(depth_path))

        output = read_image(manifest.output_path)
        assert output.shape == (3, 96, 96)
        assert manifest.output_hash == sha256_file(manifest.output_path)
        assert manifest.input_hashes["image"] == sha256_file(image_path)
        assert "depth" in manifest.input_hashes
        assert manifest.triplets > 0
        assert manifest.retrievals > 0
        assert manifest.fallback_rate == pytest.approx(manifest.fallbacks / manifest.retrievals)
        assert manifest.config["PATCH_SIDE"] == 8

        assert manifest.peak_rss_mb > 0
        assert manifest.peak_rss_mb >= max(t.rss_mb for t in manifest.stages) - 0.05

        stages = [timing.stage for timing in manifest.stages]
        for stage in ("load-inputs", "build-database", "mine-triplets", "train", "infer", "post-process"):
            assert stage in stages

        losses = read_csv(manifest.loss_trace_path)
        assert len(losses) == manifest.iterations
        audit = read_csv(manifest.audit_path)
        assert len(audit) == manifest.retrievals

        on_disk = json.loads((out / "manifest.json").read_text())
        assert on_disk["run_id"] == manifest.run_id
        assert on_disk["peak_rss_mb"] == manifest.peak_rss_mb

        net = get_checkpoint_repository().load(manifest.checkpoint_path)
        assert isinstance(net, RZSRNetwork)
        assert net.parameter_count == manifest.parameter_count


@pytest.mark.slow
class TestAblation:
    def test_one_row_per_variant(self, tmp_path, tiny_settings):
        settings = tiny_settings(PATCH_SIDE=8, MAX_ITERS=3)
        hr_dir = tmp_path / "hr"
        hr_dir.mkdir()
        write_image(hr_dir / "brick.png", brick(64))
        depth_dir = tmp_path / "depth"
        depth_dir.mkdir()
        write_depth_dpt(depth_dir / "brick.dpt", ramp_depth(64, 64))

        rows = AblationService(settings).run(str(hr_dir), str(tmp_path / "out"), str(depth_dir))

        assert [row.variant for row in rows] == [variant for variant, _, _ in ABLATION_VARIANTS]
        for row in rows:
            assert row.images == 1
            assert np.isfinite(row.mean_psnr_db)
            assert 0.0 < row.mean_ssim <= 1.0
            assert (tmp_path / "out" / f"metrics_{row.variant}.csv").is_file()
        assert len(read_csv(tmp_path / "out" / "ablation.csv")) == 4


@pytest.mark.slow
class TestDeskScaleGain:
    def test_full_mode_beats_bicubic_on_synthetic_suite(self, tiny_settings):
        full = tiny_settings(
            PATCH_SIDE=16, CHANNELS=16, EMBED_DIM=8, MAX_ITERS=1000, CHECK_EVERY=50, SLOPE_WINDOW=10, SEED=0,
        )
        reference_free = full.derive(MODE=ModelMode.REFERENCE_FREE)
        depth = ramp_depth(64, 64)

        scores = {"bicubic": [], "full": [], "reference-free": []}
        for name in sorted(PATTERNS):
            hr = PATTERNS[name](128)
            lr = resize_bicubic(hr, 0.5)
            scores["bicubic"].append(psnr_y(clamp01(resize_bicubic(lr, 2)), hr, shave=2))
            for variant, settings in (("full", full), ("reference-free", reference_free)):
                output = PipelineService(settings).super_resolve(lr, depth).output
                scores[variant].append(psnr_y(output, hr, shave=2))

        means = {variant: float(np.mean(values)) for variant, values in scores.items()}
        assert means["full"] >= means["bicubic"] + 0.5
        assert means["full"] >= means["reference-free"] - 0.05
