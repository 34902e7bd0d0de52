"""
Tests for Adam and the plateau learning-rate schedule
"""
import numpy as np
import pytest

from rzsr.core.error_handlers import ShapeError
from rzsr.network.optim import AdamState, LrSchedule, adam_step


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -2.0, 0.5])}
        grads = {"w": np.array([0.3, -4.0, 2.0])}
        state = AdamState(params)
        adam_step(params, grads, state, lr=0.01)
        np.testing.assert_allclose(params["w"], [0.99, -1.99, 0.49], atol=1e-7)
        assert state.step == 1

    def test_zero_gradient_leaves_parameter(self):
        params = {"w": np.ones(4)}
        state = AdamState(params)
        adam_step(params, {"w": np.zeros(4)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], np.ones(4))

    def test_shape_mismatch(self):
        params = {"w": np.ones(4)}
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.ones(3)}, AdamState(params), lr=0.1)

    def test_minimizes_quadratic(self):
        params = {"w": np.array([3.0, -1.5])}
        state = AdamState(params)
        for _ in range(2000):
            adam_step(params, {"w": 2.0 * params["w"]}, state, lr=0.05)
        np.testing.assert_allclose(params["w"], 0.0, atol=0.1)


class TestLrSchedule:
    def test_waits_for_full_window(self):
        schedule = LrSchedule(1e-3, window=4)
        for _ in range(3):
            assert not schedule.update(0.5)
        assert schedule.lr == 1e-3

    def test_flat_history_drops_by_factor(self):
        schedule = LrSchedule(1e-3, factor=10.0, window=4)
        dropped = [schedule.update(0.25) for _ in range(4)]
        assert dropped == [False, False, False, True]
        assert schedule.lr == pytest.approx(1e-4, rel=1e-12)
        assert schedule.lr_trace == [1e-3, schedule.lr]
        assert schedule.history == []

    def test_steady_decrease_keeps_rate(self):
        schedule = LrSchedule(1e-3, window=4)
        for error in (1.0, 0.9, 0.8, 0.7, 0.6, 0.5):
            assert not schedule.update(error)
        assert schedule.lr == 1e-3

    def test_noisy_plateau_drops(self):
        schedule = LrSchedule(1e-3, window=6)
        errors = [0.50, 0.52, 0.49, 0.51, 0.50, 0.52]
        assert [schedule.update(e) for e in errors][-1]

    def test_finishes_below_minimum(self):
        schedule = LrSchedule(1e-3, factor=10.0, min_lr=5e-6, window=4)
        drops = 0
        while not schedule.finished:
            drops += schedule.update(0.1)
        assert drops == 3
        assert schedule.lr < 5e-6
