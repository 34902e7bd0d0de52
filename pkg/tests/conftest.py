"""
Shared fixtures: synthetic images, depth ramps and small-network settings
"""
import numpy as np
import pytest

from rzsr.core.config import build_settings
from rzsr.utils.synthetic import brick, checker, ramp_depth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    def make(height=32, width=32, channels=3):
        return rng.uniform(0.0, 1.0, size=(channels, height, width))
    return make


@pytest.fixture
def smooth_image():
    """Band-limited RGB image well inside [0, 1]"""
    def make(height=64, width=64):
        y, x = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        base = 0.5 + 0.2 * np.sin(2 * np.pi * x / 23.0) * np.cos(2 * np.pi * y / 29.0)
        return np.stack([base, 0.9 * base + 0.05, 1.0 - base])
    return make


@pytest.fixture
def brick_image():
    return brick(64)


@pytest.fixture
def checker_image():
    return checker(64)


@pytest.fixture
def depth_ramp():
    return ramp_depth


@pytest.fixture
def tiny_settings():
    """Small network and patches so the whole pipeline runs in seconds"""
    def make(**overrides):
        values = dict(
            PATCH_SIDE=16,
            CHANNELS=4,
            EMBED_DIM=2,
            MAX_ITERS=6,
            CHECK_EVERY=3,
            SLOPE_WINDOW=4,
            MIN_TRIPLETS=4,
            EVAL_TRIPLETS=2,
            TILE_STRIDE=8,
            BP_ITERS=2,
            SHOW_PROGRESS=False,
        )
        values.update(overrides)
        return build_settings(values)
    return make
