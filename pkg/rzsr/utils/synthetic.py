"""
Synthetic self-similar images
Deterministic textures with strong cross-scale recurrence, used for desk-scale checks
"""
from typing import Callable, Dict

import numpy as np


def _coords(size: int):
    return np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="xy")


def brick(size: int = 128) -> np.ndarray:
    x, y = _coords(size)
    row = (y // 8).astype(int)
    shifted = (x + (row % 2) * 8) % 16
    mortar = ((y % 8) < 1) | (shifted < 1)
    base = np.where(mortar, 0.85, 0.35 + 0.1 * np.sin(row))
    return np.stack([base, base * 0.7, base * 0.5])


def grid(size: int = 128) -> np.ndarray:
    x, y = _coords(size)
    lines = ((x % 12) < 2) | ((y % 12) < 2)
    plane = np.where(lines, 0.9, 0.2)
    return np.stack([plane, plane, 0.5 * plane + 0.25])


def checker(size: int = 128) -> np.ndarray:
    x, y = _coords(size)
    plane = np.where(((x // 6) + (y // 6)) % 2 == 0, 0.8, 0.15)
    return np.stack([plane, 0.6 * plane + 0.2, plane])


def weave(size: int = 128) -> np.ndarray:
    x, y = _coords(size)
    plane = 0.5 + 0.25 * np.sin(2 * np.pi * x / 10) * np.sign(np.sin(2 * np.pi * y / 20))
    plane += 0.15 * np.cos(2 * np.pi * (x + y) / 14)
    plane = np.clip(plane, 0.0, 1.0)
    return np.stack([plane, plane * 0.9, 1.0 - 0.5 * plane])


def tiled(size: int = 128, seed: int = 7) -> np.ndarray:
    """A random 16x16 motif repeated over the image"""
    rng = np.random.default_rng(seed)
    motif = rng.uniform(0.1, 0.9, size=(3, 16, 16))
    reps = -(-size // 16)
    return np.tile(motif, (1, reps, reps))[:, :size, :size].copy()


PATTERNS: Dict[str, Callable[[int], np.ndarray]] = {
    "brick": brick,
    "grid": grid,
    "checker": checker,
    "weave": weave,
    "tiled": tiled,
}


def ramp_depth(height: int, width: int) -> np.ndarray:
    """Depth increasing from the top row (0) to the bottom row (1)"""
    column = np.linspace(0.0, 1.0, height)
    return np.repeat(column[:, None], width, axis=1)
