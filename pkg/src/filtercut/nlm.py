"""Windowed non-local means as a cut operator (patch affinities).

Weights are evaluated exactly; no approximate NLM accelerator is used.  Each
unordered pixel pair inside the search window is scored once and scattered
to both endpoints, which keeps the implied W exactly symmetric.
"""

from __future__ import annotations

import numpy as np

from .affinity import PatchConfig, _gauss, _overlap, patch_channel_weights, patch_sqdist, patch_stack
from .image import Image
from .operators import CutOperator

# cache per-offset weights when they fit in this many float64 values
WEIGHT_CACHE_LIMIT = 40_000_000


def _half_window(radius: int):
    """Offsets strictly after (0, 0) in row-major order."""
    return [(dy, dx) for dy in range(0, radius + 1) for dx in range(-radius, radius + 1) if dy > 0 or dx > 0]


class NlmOperator(CutOperator):
    """Non-local means operator whose weights come from a fixed guidance image."""

    def __init__(self, guidance: Image, cfg: PatchConfig):
        super().__init__(guidance.n)
        self.guidance = guidance
        self.cfg = cfg
        self.height, self.width = guidance.height, guidance.width
        self.patches = patch_stack(guidance, cfg.patch_radius).reshape(self.height, self.width, -1)
        self.patch_weights = patch_channel_weights(cfg, guidance.channels)
        self.offsets = [
            (dy, dx) for dy, dx in _half_window(cfg.search_radius) if abs(dy) < self.height and abs(dx) < self.width
        ]
        self._cache = None
        if self.n * len(self.offsets) <= WEIGHT_CACHE_LIMIT:
            self._cache = [self._offset_weights(dy, dx) for dy, dx in self.offsets]

    def _offset_weights(self, dy: int, dx: int) -> np.ndarray:
        ys, ysrc = _overlap(dy, self.height)
        xs, xsrc = _overlap(dx, self.width)
        dist = patch_sqdist(self.patches[ys, xs], self.patches[ysrc, xsrc], self.patch_weights)
        return _gauss(float(dy * dy + dx * dx), self.cfg.sigma_x) * _gauss(dist, self.cfg.sigma_n)

    def weights(self):
        """Yield ``(dy, dx, w)`` for every half-window offset."""
        for k, (dy, dx) in enumerate(self.offsets):
            yield dy, dx, (self._cache[k] if self._cache is not None else self._offset_weights(dy, dx))

    def _apply(self, v):
        h, w = self.height, self.width
        extra = v.shape[1:]
        vals = v.reshape((h, w) + extra)
        out = vals.copy()  # self weight is exactly 1
        for dy, dx, wt in self.weights():
            ys, ysrc = _overlap(dy, h)
            xs, xsrc = _overlap(dx, w)
            if extra:
                wt = wt[..., None]
            out[ys, xs] += wt * vals[ysrc, xsrc]
            out[ysrc, xsrc] += wt * vals[ys, xs]
        return out.reshape(v.shape)


def nlm_build(guidance: Image, cfg: PatchConfig) -> NlmOperator:
    return NlmOperator(guidance, cfg)


def nlm_apply(op: NlmOperator, v):
    """``(W v, d)`` for the patch-affinity W of ``op``."""
    return op.apply_w(v), op.degree()


def nlm_degree(op: NlmOperator) -> np.ndarray:
    return op.degree()
