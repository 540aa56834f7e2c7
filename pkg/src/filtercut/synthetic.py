"""Seeded synthetic test images with known ground truth."""

from __future__ import annotations

import numpy as np

from .image import Image


def two_region_mask(height: int, width: int) -> np.ndarray:
    """Off-centre disc occupying roughly a third of the frame."""
    yy, xx = np.mgrid[:height, :width]
    cy, cx = 0.45 * (height - 1), 0.4 * (width - 1)
    radius = 0.33 * min(height, width)
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.int64)


def two_region(size: int, seed: int = 0, noise: float = 0.02, levels=(0.2, 0.8), width: int | None = None):
    """Two flat intensity regions plus Gaussian noise; returns ``(image, truth)``."""
    width = width or size
    truth = two_region_mask(size, width)
    rng = np.random.default_rng(seed)
    data = np.where(truth == 1, levels[1], levels[0]).astype(np.float64)
    if noise > 0:
        data = data + rng.normal(0.0, noise, data.shape)
    return Image(np.clip(data, 0.0, 1.0)), truth


def texture_pair(size: int, mean: float = 0.5, amplitude: float = 0.4, seed: int = 0, noise: float = 0.0,
                 side: int | None = None):
    """Centred square of period-2 checkerboard on a flat field of the same mean.

    The square covers about half the frame, so a purely geometric straight
    cut matches the truth on only about half the pixels.  Returns
    ``(image, truth)`` with truth 1 on the checkerboard.
    """
    side = side or int(round(size / np.sqrt(2.0)))
    lo = (size - side) // 2
    yy, xx = np.mgrid[:size, :size]
    truth = ((yy >= lo) & (yy < lo + side) & (xx >= lo) & (xx < lo + side)).astype(np.int64)
    checker = np.where((yy + xx) % 2 == 0, mean + amplitude / 2, mean - amplitude / 2)
    data = np.where(truth == 1, checker, mean)
    if noise > 0:
        data = data + np.random.default_rng(seed).normal(0.0, noise, data.shape)
    return Image(np.clip(data, 0.0, 1.0)), truth


def label_agreement(labels, truth) -> float:
    """Fraction of pixels that agree after the best one-to-one label matching."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(getattr(labels, "labels", labels)).reshape(-1)
    b = np.asarray(getattr(truth, "labels", truth)).reshape(-1)
    ka, kb = int(a.max()) + 1, int(b.max()) + 1
    confusion = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(confusion, (a, b), 1)
    rows, cols = linear_sum_assignment(-confusion)
    return float(confusion[rows, cols].sum()) / a.size
