"""Bilateral grid: splat, blur and slice on a coarse (x, y, range) lattice.

The implied operator is ``W_hat = scale * S^T G S`` where ``S`` holds the
trilinear splat weights and ``G`` is the separable Gaussian blur.  Slicing
reuses the splat weights, so ``W_hat`` is symmetric by construction and
``W_hat 1`` (the homogeneous channel) gives the matching degrees.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.ndimage import correlate1d

from .image import Image, to_grayscale
from .operators import CutOperator


@dataclass(frozen=True)
class GridConfig:
    """Lattice geometry and blur kernel of the bilateral grid.

    Cells are ``sampling * sigma`` wide on every axis.  Splatting a sample at
    fractional offset ``t`` smears it with variance ``t (1 - t)`` cell^2, and
    slicing does the same again.  Unless ``blur_sigma`` is given, each axis
    gets a blur sigma that tops the mean smear up to exactly ``sigma^2``, so
    the implied kernel has the variance of the dense Gaussian.
    ``sampling=1, blur_sigma=1, blur_radius=2`` gives the classic grid with
    cells one sigma wide and a fixed 5-tap blur.
    """

    sigma_x: float
    sigma_i: float
    sampling: float = 0.45
    pad: int = 2
    blur_radius: int | None = None
    blur_sigma: float | None = None

    def __post_init__(self):
        if not self.sigma_x > 0 or not self.sigma_i > 0:
            raise ValueError("sigma_x and sigma_i must be positive")
        if not 0 < self.sampling <= 1.0:
            raise ValueError("sampling must lie in (0, 1]")
        if self.pad < 1:
            raise ValueError("pad must be >= 1 so trilinear spill stays on the lattice")

    @property
    def spatial_step(self) -> float:
        return float(self.sigma_x) * self.sampling

    @property
    def range_step(self) -> float:
        return min(float(self.sigma_i) * self.sampling, 1.0)

    def kernel_sigma(self, mean_spread: float = 1.0 / 6.0) -> float:
        """Blur sigma in cells for an axis whose samples smear by ``mean_spread``."""
        if self.blur_sigma is not None:
            return float(self.blur_sigma)
        return math.sqrt(max(1.0 / self.sampling**2 - 2.0 * mean_spread, 0.25))

    def kernel_radius(self, sigma: float) -> int:
        if self.blur_radius is not None:
            return int(self.blur_radius)
        return int(math.ceil(3.0 * sigma))

    def kernel(self, mean_spread: float = 1.0 / 6.0) -> np.ndarray:
        sigma = self.kernel_sigma(mean_spread)
        k = np.arange(-self.kernel_radius(sigma), self.kernel_radius(sigma) + 1, dtype=np.float64)
        taps = np.exp(-(k * k) / (2.0 * sigma**2))
        return taps / taps.sum()

    @property
    def scale(self) -> float:
        """Maps the unit-mass lattice kernel onto unit-peak Gaussian weights.

        The blurred kernel integrates to one cell volume per pair, while
        the dense weight integrates to ``(2 pi)^1.5 sigma_x^2 sigma_i``.
        """
        return (2.0 * math.pi) ** 1.5 / self.sampling**3


@dataclass
class BilateralGrid:
    """Lattice of shape ``(gy, gx, gr, c + 1)``; the last channel is homogeneous."""

    data: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        gy, gx, gr = self.data.shape[:3]
        return gx, gy, gr

    @property
    def value_channels(self) -> np.ndarray:
        return self.data[..., :-1]

    @property
    def homogeneous_channel(self) -> np.ndarray:
        return self.data[..., -1]


def grid_dims(width: int, height: int, cfg: GridConfig) -> tuple[int, int, int]:
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    gx = math.floor((width - 1) / cfg.spatial_step) + 1 + 2 * cfg.pad
    gy = math.floor((height - 1) / cfg.spatial_step) + 1 + 2 * cfg.pad
    gr = math.floor(1.0 / cfg.range_step) + 1 + 2 * cfg.pad
    return gx, gy, gr


class GridLayout:
    """Trilinear cell indices and weights of every pixel, shared by splat and slice."""

    def __init__(self, guidance: Image, cfg: GridConfig):
        if guidance.channels != 1:
            raise ValueError("bilateral grid guidance must be grayscale")
        self.cfg = cfg
        h, w = guidance.height, guidance.width
        self.n = h * w
        self.dims = grid_dims(w, h, cfg)
        gx, gy, gr = self.dims
        rows, cols = np.divmod(np.arange(self.n), w)
        inten = np.clip(guidance.flat, 0.0, 1.0)
        pos = (
            rows / cfg.spatial_step + cfg.pad,
            cols / cfg.spatial_step + cfg.pad,
            inten / cfg.range_step + cfg.pad,
        )
        base = [np.floor(p).astype(np.int64) for p in pos]
        frac = [p - b for p, b in zip(pos, base)]
        self.spread = tuple(float(np.mean(t * (1.0 - t))) for t in frac)
        idx = np.empty((self.n, 8), dtype=np.int64)
        wts = np.empty((self.n, 8))
        corner = 0
        for oy in (0, 1):
            wy = frac[0] if oy else 1.0 - frac[0]
            for ox in (0, 1):
                wx = frac[1] if ox else 1.0 - frac[1]
                for orr in (0, 1):
                    wr = frac[2] if orr else 1.0 - frac[2]
                    idx[:, corner] = ((base[0] + oy) * gx + (base[1] + ox)) * gr + (base[2] + orr)
                    wts[:, corner] = wy * wx * wr
                    corner += 1
        self.index = idx
        self.weights = wts
        self.cells = gx * gy * gr

    @property
    def shape(self) -> tuple[int, int, int]:
        gx, gy, gr = self.dims
        return gy, gx, gr

    def kernels(self) -> list[np.ndarray]:
        """Blur kernels for the (y, x, range) axes."""
        return [self.cfg.kernel(m) for m in self.spread]


def _threads(deterministic: bool) -> int:
    if deterministic:
        return 1
    env = os.environ.get("SFC_THREADS", "0")
    try:
        count = int(env)
    except ValueError:
        count = 0
    return count if count > 0 else (os.cpu_count() or 1)


def _splat_chunk(layout: GridLayout, cols: np.ndarray, lo: int, hi: int) -> np.ndarray:
    idx = layout.index[lo:hi].reshape(-1)
    wts = layout.weights[lo:hi]
    out = np.empty((layout.cells, cols.shape[1]))
    for c in range(cols.shape[1]):
        out[:, c] = np.bincount(idx, weights=(wts * cols[lo:hi, c, None]).reshape(-1), minlength=layout.cells)
    return out


def _as_columns(values, n: int) -> tuple[np.ndarray, bool]:
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != n:
        raise ValueError(f"expected {n} values per channel, got {values.shape[0]}")
    if values.ndim == 1:
        return values[:, None], True
    return values, False


def splat_layout(layout: GridLayout, values, deterministic: bool = True, homogeneous: bool = True) -> BilateralGrid:
    cols, _ = _as_columns(values, layout.n)
    if homogeneous:
        cols = np.hstack([cols, np.ones((layout.n, 1))])
    threads = min(_threads(deterministic), max(1, layout.n // 4096))
    if threads <= 1:
        flat = _splat_chunk(layout, cols, 0, layout.n)
    else:
        bounds = np.linspace(0, layout.n, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda b: _splat_chunk(layout, cols, b[0], b[1]), zip(bounds[:-1], bounds[1:])))
        flat = parts[0]
        for part in parts[1:]:  # fixed reduction order
            flat = flat + part
    return BilateralGrid(flat.reshape(layout.shape + (cols.shape[1],)))


def splat(guidance: Image, values, cfg: GridConfig, deterministic: bool = True) -> BilateralGrid:
    return splat_layout(GridLayout(guidance, cfg), values, deterministic)


def blur(grid: BilateralGrid, cfg: GridConfig, kernels=None) -> BilateralGrid:
    """Separable Gaussian along y, x and range; zero outside the lattice."""
    if kernels is None:
        kernels = [cfg.kernel()] * 3
    data = grid.data
    for axis, kernel in enumerate(kernels):
        data = correlate1d(data, kernel, axis=axis, mode="constant", cval=0.0)
    return BilateralGrid(data)


def slice_flat(grid: BilateralGrid, layout: GridLayout) -> np.ndarray:
    """Trilinear readout of every channel, shape ``(n, channels)``."""
    flat = grid.data.reshape(layout.cells, -1)
    return np.einsum("nk,nkc->nc", layout.weights, flat[layout.index])


def slice_layout(grid: BilateralGrid, layout: GridLayout):
    out = slice_flat(grid, layout)
    return out[:, :-1], out[:, -1]


def slice_grid(grid: BilateralGrid, guidance: Image, cfg: GridConfig):
    """Trilinear readout; returns ``(numerators (n, c), denominator (n,))``."""
    return slice_layout(grid, GridLayout(guidance, cfg))


def grid_apply(guidance: Image, values, cfg: GridConfig, deterministic: bool = True):
    """``(W_hat v, W_hat 1)`` for one vector or an ``(n, c)`` block.

    The weights always come from ``guidance``; ``values`` are arbitrary.
    """
    op = GridOperator(guidance, cfg, deterministic=deterministic)
    num, den = op.apply_with_degree(values)
    return num, den


def grid_filter(guidance: Image, v, cfg: GridConfig, deterministic: bool = True) -> np.ndarray:
    num, den = grid_apply(guidance, v, cfg, deterministic)
    den = np.maximum(den, 1e-12)
    return num / (den if num.ndim == 1 else den[:, None])


class GridOperator(CutOperator):
    """Cut operator backed by the bilateral grid of a fixed guidance image."""

    def __init__(self, guidance: Image, cfg: GridConfig, deterministic: bool = True):
        guidance = to_grayscale(guidance)
        super().__init__(guidance.n)
        self.guidance = guidance
        self.cfg = cfg
        self.deterministic = deterministic

    @cached_property
    def layout(self) -> GridLayout:
        return GridLayout(self.guidance, self.cfg)

    @cached_property
    def kernels(self) -> list[np.ndarray]:
        return self.layout.kernels()

    def _pass(self, cols: np.ndarray, homogeneous: bool) -> np.ndarray:
        grid = splat_layout(self.layout, cols, self.deterministic, homogeneous=homogeneous)
        grid = blur(grid, self.cfg, self.kernels)
        return slice_flat(grid, self.layout) * self.cfg.scale

    def apply_with_degree(self, values):
        """One splat/blur/slice pass returning ``(W_hat v, W_hat 1)``."""
        cols, single = _as_columns(values, self.n)
        self.applications += cols.shape[1]
        out = self._pass(cols, homogeneous=True)
        num, den = out[:, :-1], out[:, -1]
        if self._degree is None:
            self._degree = den.copy()
            self._degree.setflags(write=False)
        return (num[:, 0] if single else num), den

    def _apply(self, v):
        cols, single = _as_columns(v, self.n)
        num = self._pass(cols, homogeneous=False)
        return num[:, 0] if single else num
