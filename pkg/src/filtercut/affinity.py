"""Exact affinities, brute-force filters and the dense reference solver.

This is the ground truth.  Everything here is O(n^2) or O(n * window) and is
meant for desk-scale images; the fast operators in :mod:`filtercut.grid` and
:mod:`filtercut.nlm` are tested against it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eigen import EigenResult
from .image import Image
from .operators import CutOperator, MatrixOperator

DEFAULT_MAX_PIXELS = 4096


class OracleSizeError(ValueError):
    """The dense oracle was asked to handle more pixels than its cap."""


@dataclass(frozen=True)
class AffinityConfig:
    """Pixel affinity of intensity and position.

    ``radius=None`` means unbounded; otherwise pixels further apart than
    ``radius`` in Chebyshev distance get weight 0.
    """

    sigma_x: float
    sigma_i: float
    radius: int | None = None
    self_weight_included: bool = True

    def __post_init__(self):
        if not self.sigma_x > 0 or not self.sigma_i > 0:
            raise ValueError("sigma_x and sigma_i must be positive")
        if self.radius is not None and self.radius < 1:
            raise ValueError("radius must be >= 1 or None (unbounded)")


@dataclass(frozen=True)
class PatchConfig:
    """Patch affinity used by the conditioned cut (non-local means weights)."""

    patch_radius: int = 2
    sigma_n: float = 0.3
    sigma_x: float = 3.0
    search_radius: int = 10
    gaussian_patch_weighting: bool = True

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")
        if not self.sigma_n > 0 or not self.sigma_x > 0:
            raise ValueError("sigma_n and sigma_x must be positive")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")

    @property
    def sigma_p(self) -> float:
        return max(self.patch_radius, 1) / 2.0

    def offset_weights(self) -> np.ndarray:
        """Weights of the ``(2p+1)^2`` patch offsets, row-major."""
        p = self.patch_radius
        dy, dx = np.mgrid[-p : p + 1, -p : p + 1]
        if not self.gaussian_patch_weighting:
            return np.ones(dy.size)
        return np.exp(-(dy * dy + dx * dx).reshape(-1) / (2.0 * self.sigma_p**2))


@dataclass(frozen=True)
class DenseAffinity:
    n: int
    w: np.ndarray
    d: np.ndarray

    def operator(self) -> "DenseOperator":
        return DenseOperator(self)

    def dump_triplets(self, path, threshold: float = 0.0) -> None:
        """Write ``i j w`` lines for entries above ``threshold`` (debugging aid)."""
        rows, cols = np.nonzero(self.w > threshold)
        with open(Path(path), "w") as fh:
            for i, j in zip(rows, cols):
                fh.write(f"{i} {j} {self.w[i, j]!r}\n")


class DenseOperator(MatrixOperator):
    """Explicit-matrix operator over a :class:`DenseAffinity`."""

    def __init__(self, affinity: DenseAffinity):
        super().__init__(affinity.w)
        self.affinity = affinity
        self._degree = affinity.d


def _gauss(sq, sigma):
    return np.exp(-sq / (2.0 * sigma * sigma))


def pixel_weight(cfg: AffinityConfig, pi, pj, ii: float, ij: float) -> float:
    pi = np.asarray(pi, dtype=np.float64)
    pj = np.asarray(pj, dtype=np.float64)
    delta = pi - pj
    if cfg.radius is not None and np.max(np.abs(delta)) > cfg.radius:
        return 0.0
    return float(_gauss(float(delta @ delta), cfg.sigma_x) * _gauss((ii - ij) ** 2, cfg.sigma_i))


def patch_stack(img: Image, patch_radius: int) -> np.ndarray:
    """``(n, P * C)`` array of clamp-to-edge patches, offset-major then channel."""
    p = patch_radius
    padded = np.pad(img.data, ((p, p), (p, p), (0, 0)), mode="edge")
    h, w, c = img.data.shape
    cols = [padded[p + dy : p + dy + h, p + dx : p + dx + w, :] for dy in range(-p, p + 1) for dx in range(-p, p + 1)]
    return np.stack(cols, axis=2).reshape(h * w, -1)


def patch_channel_weights(cfg: PatchConfig, channels: int) -> np.ndarray:
    return np.repeat(cfg.offset_weights(), channels)


def patch_sqdist(a: np.ndarray, b: np.ndarray, gw: np.ndarray) -> np.ndarray:
    diff = a - b
    return (diff * diff * gw).sum(axis=-1)


def patch_weight(cfg: PatchConfig, img: Image, i: int, j: int) -> float:
    stack = patch_stack(img, cfg.patch_radius)
    gw = patch_channel_weights(cfg, img.channels)
    ri, ci = divmod(i, img.width)
    rj, cj = divmod(j, img.width)
    spatial = float((ri - rj) ** 2 + (ci - cj) ** 2)
    dist = patch_sqdist(stack[i], stack[j], gw)
    return float(_gauss(spatial, cfg.sigma_x) * _gauss(dist, cfg.sigma_n))


def _coords(img: Image) -> np.ndarray:
    rows, cols = np.divmod(np.arange(img.n), img.width)
    return np.stack([rows, cols], axis=1).astype(np.float64)


def _mirror_upper(w: np.ndarray) -> np.ndarray:
    upper = np.triu(w)
    return upper + np.triu(upper, 1).T


def build_dense_affinity(img: Image, weighting, max_pixels: int = DEFAULT_MAX_PIXELS) -> DenseAffinity:
    """Dense W from either an :class:`AffinityConfig` or a :class:`PatchConfig`.

    Pixel weighting reads the grayscale image; patch weighting uses all
    channels.  Each unordered pair is evaluated once and mirrored, so W is
    symmetric bit for bit.
    """
    n = img.n
    if n > max_pixels:
        raise OracleSizeError(f"dense oracle is capped at {max_pixels} pixels, image has {n}")
    xy = _coords(img)
    dr = xy[:, None, 0] - xy[None, :, 0]
    dc = xy[:, None, 1] - xy[None, :, 1]
    spatial = dr * dr + dc * dc

    if isinstance(weighting, AffinityConfig):
        from .image import to_grayscale

        inten = to_grayscale(img).flat
        di = inten[:, None] - inten[None, :]
        w = _gauss(spatial, weighting.sigma_x) * _gauss(di * di, weighting.sigma_i)
        if weighting.radius is not None:
            w[np.maximum(np.abs(dr), np.abs(dc)) > weighting.radius] = 0.0
    elif isinstance(weighting, PatchConfig):
        stack = patch_stack(img, weighting.patch_radius)
        gw = patch_channel_weights(weighting, img.channels)
        dist = np.empty((n, n))
        chunk = max(1, 2_000_000 // max(1, n * stack.shape[1]))
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            dist[start:stop] = patch_sqdist(stack[start:stop, None, :], stack[None, :, :], gw)
        w = _gauss(spatial, weighting.sigma_x) * _gauss(dist, weighting.sigma_n)
        window = np.maximum(np.abs(dr), np.abs(dc)) > weighting.search_radius
        w[window] = 0.0
    else:
        raise TypeError(f"unknown weighting {type(weighting).__name__}")

    w = _mirror_upper(w)
    np.fill_diagonal(w, 1.0)
    w.setflags(write=False)
    d = w.sum(axis=1)
    d.setflags(write=False)
    return DenseAffinity(n=n, w=w, d=d)


def dense_apply(a: DenseAffinity, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != a.n:
        raise ValueError(f"vector length {v.shape[0]} does not match n={a.n}")
    return a.w @ v


def _window_offsets(radius: int):
    return [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]


def _overlap(offset: int, size: int):
    """Slices ``(dst, src)`` such that ``dst + offset == src`` inside ``[0, size)``."""
    if offset >= 0:
        return slice(0, size - offset), slice(offset, size)
    return slice(-offset, size), slice(0, size + offset)


def brute_bilateral(guidance: Image, v, cfg: AffinityConfig):
    """Windowed joint bilateral sums ``(sum_j w_ij v_j, sum_j w_ij)``.

    The window offsets are visited in row-major order, so for every pixel the
    contributions arrive in ascending flat index ``j``.
    """
    if cfg.radius is None:
        raise ValueError("brute_bilateral needs a finite radius; use dense_apply for unbounded W")
    if guidance.channels != 1:
        raise ValueError("brute_bilateral expects a grayscale guidance image")
    inten = guidance.plane
    h, w = inten.shape
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != h * w:
        raise ValueError("value vector does not match the guidance size")
    extra = v.shape[1:]
    vals = v.reshape((h, w) + extra)
    num = np.zeros((h, w) + extra)
    den = np.zeros((h, w))
    for dy, dx in _window_offsets(cfg.radius):
        if abs(dy) >= h or abs(dx) >= w:
            continue
        ys, ysrc = _overlap(dy, h)
        xs, xsrc = _overlap(dx, w)
        diff = inten[ysrc, xsrc] - inten[ys, xs]
        wt = _gauss(float(dy * dy + dx * dx), cfg.sigma_x) * _gauss(diff * diff, cfg.sigma_i)
        den[ys, xs] += wt
        if extra:
            num[ys, xs] += wt[..., None] * vals[ysrc, xsrc]
        else:
            num[ys, xs] += wt * vals[ysrc, xsrc]
    return num.reshape(v.shape), den.reshape(-1)


def brute_nlm(guidance: Image, v, cfg: PatchConfig):
    """Per-pixel non-local means sums over the square search window."""
    h, w = guidance.height, guidance.width
    n = h * w
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != n:
        raise ValueError("value vector does not match the guidance size")
    stack = patch_stack(guidance, cfg.patch_radius)
    gw = patch_channel_weights(cfg, guidance.channels)
    num = np.zeros(v.shape)
    den = np.zeros(n)
    r = cfg.search_radius
    for i in range(n):
        ri, ci = divmod(i, w)
        y0, y1 = max(0, ri - r), min(h, ri + r + 1)
        x0, x1 = max(0, ci - r), min(w, ci + r + 1)
        js = (np.arange(y0, y1)[:, None] * w + np.arange(x0, x1)[None, :]).reshape(-1)
        rj, cj = np.divmod(js, w)
        spatial = ((rj - ri) ** 2 + (cj - ci) ** 2).astype(np.float64)
        wt = _gauss(spatial, cfg.sigma_x) * _gauss(patch_sqdist(stack[i], stack[js], gw), cfg.sigma_n)
        den[i] = wt.sum()
        num[i] = wt @ v[js]
    return num, den


class BruteBilateralOperator(CutOperator):
    """Windowed joint bilateral filter recomputing every weight per call.

    This is the conventional-cost baseline: each application touches
    ``(2r+1)^2`` neighbours per pixel.
    """

    def __init__(self, guidance: Image, cfg: AffinityConfig):
        if cfg.radius is None:
            raise ValueError("the windowed operator needs a finite radius")
        super().__init__(guidance.n)
        self.guidance = guidance
        self.cfg = cfg

    def _apply(self, v):
        return brute_bilateral(self.guidance, v, self.cfg)[0]


def random_sparsify(a: DenseAffinity, keep_ratio: float, seed: int) -> DenseAffinity:
    """Keep each off-diagonal pair with probability ``keep_ratio``."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must lie in (0, 1]")
    if keep_ratio == 1.0:
        return a
    rng = np.random.default_rng(seed)
    keep = np.triu(rng.random((a.n, a.n)) < keep_ratio, 1)
    keep = keep | keep.T
    np.fill_diagonal(keep, True)
    w = np.where(keep, a.w, 0.0)
    w.setflags(write=False)
    d = w.sum(axis=1)
    d.setflags(write=False)
    return DenseAffinity(n=a.n, w=w, d=d)


def dense_ncut_solve(a: DenseAffinity, k: int) -> EigenResult:
    """Top-``k`` eigenpairs of ``D^-1/2 W D^-1/2`` by full eigendecomposition."""
    if k > a.n or k < 1:
        raise ValueError(f"k must lie in [1, n={a.n}], got {k}")
    s = 1.0 / np.sqrt(a.d)
    sym = a.w * s[:, None] * s[None, :]
    sym = 0.5 * (sym + sym.T)
    mu, z = np.linalg.eigh(sym)
    order = np.argsort(mu)[::-1][:k]
    mu = mu[order]
    z = z[:, order]
    # fix the sign so the largest-magnitude entry is positive
    for j in range(k):
        if z[np.argmax(np.abs(z[:, j])), j] < 0:
            z[:, j] = -z[:, j]
    return EigenResult(
        mode="normalized",
        mu=mu,
        lam=1.0 - mu,
        sym_vectors=z,
        vectors=z * s[:, None],
        degree=np.asarray(a.d),
        iterations=0,
        filter_applications=0,
        residuals=np.linalg.norm(sym @ z - z * mu, axis=0),
        converged=np.ones(k, dtype=bool),
    )


def rayleigh_quotient(a: DenseAffinity, y) -> float:
    """``y^T (D - W) y / y^T D y``."""
    y = np.asarray(y, dtype=np.float64)
    denom = float(y @ (a.d * y))
    if not denom > 0:
        raise ValueError("y has zero D-norm")
    return float(y @ (a.d * y - a.w @ y)) / denom


__all__ = [
    "AffinityConfig",
    "PatchConfig",
    "DenseAffinity",
    "DenseOperator",
    "BruteBilateralOperator",
    "OracleSizeError",
    "pixel_weight",
    "patch_weight",
    "patch_stack",
    "build_dense_affinity",
    "dense_apply",
    "brute_bilateral",
    "brute_nlm",
    "random_sparsify",
    "dense_ncut_solve",
    "rayleigh_quotient",
]
