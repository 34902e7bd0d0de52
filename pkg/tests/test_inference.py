"""
Tests for tiling, overlap aggregation, back-projection and the geometric ensemble
"""
import numpy as np
import pytest

from rzsr.core.error_handlers import ShapeError
from rzsr.models.schemas import ModelMode, OverlapWeighting
from rzsr.network.model import RZSRNetwork
from rzsr.services.inference_service import (
    TAPER_FLOOR, InferenceService, back_project, build_search_structure, downscale_residual,
    plan_tiles, tile_weights
)
from rzsr.utils.image_ops import clamp01, dihedral_transform, inverse_dihedral_transform, resize_bicubic
from rzsr.utils.synthetic import PATTERNS


class ConstantNetwork:
    def __init__(self, value):
        self.value = value
        self.cousins = []

    def forward(self, son_up, cousin=None):
        self.cousins.append(cousin)
        return np.full_like(son_up, self.value)


class BicubicCousinNetwork:
    """Discards the retrieved cousin and feeds the bicubic upsample instead"""

    def __init__(self, net):
        self.net = net

    def forward(self, son_up, cousin=None):
        return self.net.forward(son_up, son_up.copy())


class BrokenNetwork:
    def forward(self, son_up, cousin=None):
        raise ShapeError("bad tile", details={"shape": list(son_up.shape)})


def _identity_network(settings):
    return RZSRNetwork(settings.MODE, 3, settings.CHANNELS, settings.EMBED_DIM, "float64")


class TestTilePlan:
    def test_exact_fit_is_one_tile(self):
        plan = plan_tiles(48, 48, 48, 4)
        assert plan.tops == [0] and plan.lefts == [0]
        assert len(plan) == 1
        assert plan.padding == (0, 0, 0, 0)

    def test_stride_steps(self):
        plan = plan_tiles(48, 52, 48, 4)
        assert plan.lefts == [0, 4]
        assert plan.tops == [0]

    def test_last_window_is_flush(self):
        plan = plan_tiles(48, 50, 48, 4)
        assert plan.lefts == [0, 2]

    def test_coverage_has_no_holes(self):
        plan = plan_tiles(37, 53, 16, 6)
        coverage = plan.coverage(2)
        assert coverage.shape == (74, 106)
        assert coverage.min() >= 1

    def test_small_input_is_padded(self):
        plan = plan_tiles(40, 60, 48, 4)
        assert plan.padding == (4, 4, 0, 0)
        assert plan.height == 48
        assert plan.tops == [0]

    def test_stride_must_be_positive(self):
        with pytest.raises(ShapeError):
            plan_tiles(48, 48, 48, 0)


class TestTileWeights:
    def test_uniform(self):
        np.testing.assert_array_equal(tile_weights(8, OverlapWeighting.UNIFORM), np.ones((8, 8)))

    def test_tapered_is_symmetric_and_floored(self):
        w = tile_weights(16, OverlapWeighting.TAPERED)
        np.testing.assert_allclose(w, w.T)
        np.testing.assert_allclose(w, w[::-1, ::-1])
        assert w.min() >= TAPER_FLOOR ** 2
        assert w[7, 7] == w.max()


class TestBackProjection:
    def test_consistent_estimate_is_fixed_point(self, smooth_image):
        sr = smooth_image(32, 32)
        lr = resize_bicubic(sr, 0.5)
        np.testing.assert_allclose(back_project(sr, lr), sr, atol=1e-12)

    def test_zero_iterations_is_identity(self, random_image):
        sr = random_image(16, 16)
        out = back_project(sr, random_image(8, 8), iters=0)
        np.testing.assert_array_equal(out, sr)
        assert out is not sr

    def test_reduces_residual(self, random_image):
        lr = random_image(12, 12)
        sr = clamp01(resize_bicubic(lr, 2) + 0.05)
        before = np.linalg.norm(downscale_residual(sr, lr))
        after = np.linalg.norm(downscale_residual(back_project(sr, lr, iters=4), lr))
        assert after < before

    @pytest.mark.parametrize("pattern", sorted(PATTERNS))
    def test_halves_residual_on_synthetic_suite(self, pattern):
        lr = resize_bicubic(PATTERNS[pattern](64), 0.5)
        sr = resize_bicubic(lr, 2)
        before = np.linalg.norm(downscale_residual(sr, lr))
        after = np.linalg.norm(downscale_residual(back_project(sr, lr), lr))
        assert before > 0
        assert after <= 0.5 * before

    def test_requires_double_size(self, random_image):
        with pytest.raises(ShapeError):
            back_project(random_image(16, 16), random_image(9, 8))


class TestSrImage:
    @pytest.mark.parametrize("mode", [ModelMode.FULL, ModelMode.REFERENCE_FREE])
    def test_identity_network_reproduces_bicubic(self, smooth_image, depth_ramp, tiny_settings, mode):
        settings = tiny_settings(MODE=mode, NET_DTYPE="float64")
        img = smooth_image(32, 40)
        depth = depth_ramp(32, 40)
        search2 = build_search_structure(img, depth, settings)
        result = InferenceService(settings).sr_image(img, depth, _identity_network(settings), search2)
        assert result.output.shape == (3, 64, 80)
        np.testing.assert_allclose(result.output, clamp01(resize_bicubic(img, 2)), atol=1e-6)

    def test_constant_network(self, smooth_image, tiny_settings):
        settings = tiny_settings(MODE=ModelMode.REFERENCE_FREE)
        net = ConstantNetwork(0.5)
        result = InferenceService(settings).sr_image(smooth_image(24, 32), None, net, None)
        np.testing.assert_allclose(result.output, 0.5)
        assert result.tiles == len(plan_tiles(24, 32, 16, 8))
        assert result.retrievals == 0
        assert all(c is None for c in net.cousins)

    def test_output_is_clamped(self, smooth_image, tiny_settings):
        settings = tiny_settings(MODE=ModelMode.REFERENCE_FREE)
        result = InferenceService(settings).sr_image(smooth_image(16, 16), None, ConstantNetwork(1.7), None)
        assert np.all(result.output == 1.0)

    def test_zero_threshold_falls_back_everywhere(self, smooth_image, depth_ramp, tiny_settings):
        settings = tiny_settings(THRESHOLD=0.0, AUDIT=True)
        img = smooth_image(32, 32)
        depth = depth_ramp(32, 32)
        net = ConstantNetwork(0.25)
        result = InferenceService(settings).sr_image(img, depth, net, build_search_structure(img, depth, settings))
        assert result.fallbacks == result.retrievals == result.tiles
        assert result.fallback_rate == 1.0
        assert len(result.audit) == result.tiles
        assert all(row.used_fallback and row.cousin_x is None for row in result.audit)
        assert all(c is not None for c in net.cousins)

    def test_zero_threshold_equals_bicubic_cousins(self, smooth_image, depth_ramp, tiny_settings):
        img = smooth_image(32, 32)
        depth = depth_ramp(32, 32)
        net = RZSRNetwork(ModelMode.FULL, 3, 4, 2, "float64", seed=3)
        zero = tiny_settings(THRESHOLD=0.0, NET_DTYPE="float64")
        loose = tiny_settings(THRESHOLD=2.0, NET_DTYPE="float64")

        forced = InferenceService(zero).sr_image(img, depth, net, build_search_structure(img, depth, zero))
        replaced = InferenceService(loose).sr_image(
            img, depth, BicubicCousinNetwork(net), build_search_structure(img, depth, loose),
        )
        assert forced.fallbacks == forced.tiles
        assert replaced.fallbacks < replaced.tiles
        np.testing.assert_array_equal(forced.output, replaced.output)

    def test_fallback_set_shrinks_as_threshold_rises(self, smooth_image, depth_ramp, tiny_settings):
        img = smooth_image(48, 48)
        depth = depth_ramp(48, 48)
        fallback_tiles = {}
        distances = {}
        for threshold in (0.7, 0.9):
            settings = tiny_settings(PATCH_SIDE=8, TILE_STRIDE=4, THRESHOLD=threshold, AUDIT=True)
            search2 = build_search_structure(img, depth, settings)
            result = InferenceService(settings).sr_image(img, depth, ConstantNetwork(0.5), search2)
            fallback_tiles[threshold] = {(row.tile_x, row.tile_y) for row in result.audit if row.used_fallback}
            distances[threshold] = [row.distance for row in result.audit]
        assert distances[0.7] == distances[0.9]
        assert fallback_tiles[0.9] <= fallback_tiles[0.7]

    def test_audit_reports_retrieved_cousins(self, smooth_image, depth_ramp, tiny_settings):
        settings = tiny_settings(PATCH_SIDE=8, TILE_STRIDE=4, THRESHOLD=2.0, AUDIT=True)
        img = smooth_image(48, 48)
        depth = depth_ramp(48, 48)
        search2 = build_search_structure(img, depth, settings)
        result = InferenceService(settings).sr_image(img, depth, ConstantNetwork(0.5), search2)
        retrieved = [row for row in result.audit if not row.used_fallback]
        assert retrieved
        for row in retrieved:
            assert row.cousin_depth < row.query_depth
            assert row.distance <= 2.0

    def test_small_input_is_padded_and_cropped(self, random_image, tiny_settings):
        settings = tiny_settings(MODE=ModelMode.REFERENCE_FREE, NET_DTYPE="float64")
        result = InferenceService(settings).sr_image(random_image(10, 12), None, _identity_network(settings), None)
        assert result.output.shape == (3, 20, 24)
        assert result.output.min() >= 0.0 and result.output.max() <= 1.0

    def test_network_shape_error_names_tile(self, smooth_image, tiny_settings):
        settings = tiny_settings(MODE=ModelMode.REFERENCE_FREE)
        with pytest.raises(ShapeError) as info:
            InferenceService(settings).sr_image(smooth_image(16, 16), None, BrokenNetwork(), None)
        assert info.value.details["tile_x"] == 0
        assert info.value.details["tile_y"] == 0


class TestGeometricEnsemble:
    def test_disabled_equals_single_pass(self, smooth_image, depth_ramp, tiny_settings):
        settings = tiny_settings(NET_DTYPE="float64")
        img = smooth_image(32, 32)
        depth = depth_ramp(32, 32)
        search2 = build_search_structure(img, depth, settings)
        service = InferenceService(settings)
        net = RZSRNetwork(ModelMode.FULL, 3, 4, 2, "float64", seed=1)
        single = service.sr_image(img, depth, net, search2)
        ensemble = service.geometric_ensemble(img, depth, net, search2, enabled=False)
        np.testing.assert_array_equal(ensemble.output, single.output)

    def test_identity_network_is_equivariant(self, smooth_image, tiny_settings):
        settings = tiny_settings(MODE=ModelMode.REFERENCE_FREE, NET_DTYPE="float64")
        img = smooth_image(32, 32)
        service = InferenceService(settings)
        net = _identity_network(settings)
        single = service.sr_image(img, None, net, None)
        ensemble = service.geometric_ensemble(img, None, net, None, enabled=True)
        assert ensemble.tiles == 8 * single.tiles
        np.testing.assert_allclose(ensemble.output, single.output, atol=1e-9)

    def test_average_of_eight_restored_passes(self, smooth_image, depth_ramp, tiny_settings):
        settings = tiny_settings(NET_DTYPE="float64", THRESHOLD=2.0)
        img = smooth_image(32, 32)
        depth = depth_ramp(32, 32)
        service = InferenceService(settings)
        net = RZSRNetwork(ModelMode.FULL, 3, 4, 2, "float64", seed=5)
        search2 = build_search_structure(img, depth, settings)

        total = None
        for transform_id in range(8):
            img_t = dihedral_transform(img, transform_id)
            depth_t = dihedral_transform(depth, transform_id)
            search_t = search2 if transform_id == 0 else build_search_structure(img_t, depth_t, settings)
            restored = inverse_dihedral_transform(service.sr_image(img_t, depth_t, net, search_t).output, transform_id)
            total = restored if total is None else total + restored

        ensemble = service.geometric_ensemble(img, depth, net, search2, enabled=True)
        np.testing.assert_allclose(ensemble.output, total / 8.0, atol=1e-12)
