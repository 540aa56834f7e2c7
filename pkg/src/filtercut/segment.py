"""End-to-end segmentation: build an operator, solve, discretize, score."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityConfig, BruteBilateralOperator, PatchConfig, build_dense_affinity, random_sparsify
from .eigen import EigenResult, SolverConfig, ncut_eigs
from .grid import GridConfig, GridOperator
from .image import Image, LabelMap, relabel_contiguous, to_grayscale
from .nlm import NlmOperator
from .operators import CutOperator, DegenerateGraphError, MaskedOperator

log = logging.getLogger(__name__)

PIPELINES = ("dense_ncut", "fast_ncut", "cond_ncut")


@dataclass(frozen=True)
class SegmentConfig:
    pipeline: str
    affinity: AffinityConfig | PatchConfig
    num_segments: int = 2
    num_eigvecs: int | None = None
    discretization: str = "kmeans"
    ncut_stop_threshold: float = 0.06
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 100
    thresholds_per_split: int = 32
    row_normalize: bool = False
    seed: int = 0
    tol: float = 1e-6
    max_iterations: int = 300
    grid_sampling: float = GridConfig.sampling
    keep_ratio: float = 1.0
    max_dense_pixels: int = 4096
    deterministic: bool = True

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}")
        if self.num_segments < 2:
            raise ValueError("num_segments must be >= 2")
        if self.eigvecs < self.num_segments - 1:
            raise ValueError("num_eigvecs must be >= num_segments - 1")
        if self.discretization not in ("kmeans", "twoway"):
            raise ValueError("discretization must be 'kmeans' or 'twoway'")
        expected = PatchConfig if self.pipeline == "cond_ncut" else AffinityConfig
        if not isinstance(self.affinity, expected):
            raise TypeError(f"{self.pipeline} needs a {expected.__name__}")

    @property
    def eigvecs(self) -> int:
        return self.num_segments if self.num_eigvecs is None else self.num_eigvecs

    def solver(self, k: int | None = None) -> SolverConfig:
        return SolverConfig(k=k or self.eigvecs, tol=self.tol, max_iterations=self.max_iterations, seed=self.seed)


@dataclass
class SegmentationResult:
    labels: LabelMap
    eigen: EigenResult
    ncut_cost: float
    split_costs: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    filter_applications: int = 0


def _indicators(labels: np.ndarray, k: int) -> np.ndarray:
    return (labels[:, None] == np.arange(k)[None, :]).astype(np.float64)


def ncut_cost(op: CutOperator, labels) -> float:
    """k-way normalized cut ``sum_A cut(A, V - A) / assoc(A, V)``.

    One operator application per segment (issued as one block).
    """
    flat = labels.flat if isinstance(labels, LabelMap) else np.asarray(labels).reshape(-1)
    k = int(flat.max()) + 1
    if k < 2:
        raise ValueError("a cut needs at least two segments")
    ind = _indicators(flat, k)
    if np.any(ind.sum(axis=0) == 0):
        raise ValueError("every segment id in 0..k-1 must be non-empty")
    d = op.degree()
    assoc = ind.T @ d
    within = np.einsum("ik,ik->k", ind, op.apply_w(ind))
    cut = np.maximum(assoc - within, 0.0)
    return float(np.sum(cut / assoc))


def _threshold_candidates(y: np.ndarray, count: int) -> np.ndarray:
    q = (np.arange(count) + 0.5) / count
    return np.quantile(y, q)


def discretize_twoway(y, op: CutOperator, thresholds: int = 32):
    """Best of ``thresholds`` quantile splits of ``y`` by two-way Ncut.

    Returns ``(labels, best_cost, costs)`` where ``labels`` is 1 where
    ``y > threshold`` and ``costs`` maps each evaluated threshold to its cost.
    """
    y = np.asarray(y, dtype=np.float64)
    cands = []
    for thr in _threshold_candidates(y, thresholds):
        upper = y > thr
        if upper.any() and not upper.all() and not any(np.array_equal(upper, c[1]) for c in cands):
            cands.append((float(thr), upper))
    if not cands:
        raise DegenerateGraphError("every threshold leaves one side empty; the eigenvector is constant")
    ind = np.column_stack([c[1] for c in cands]).astype(np.float64)
    d = op.degree()
    w_ind = op.apply_w(ind)
    assoc_a = ind.T @ d
    assoc_b = d.sum() - assoc_a
    cut_a = np.maximum(assoc_a - np.einsum("ik,ik->k", ind, w_ind), 0.0)
    # W 1_B = d - W 1_A, so cut(B, A) = 1_B^T W 1_A
    cut_b = np.maximum(np.einsum("ik,ik->k", 1.0 - ind, w_ind), 0.0)
    costs = cut_a / assoc_a + cut_b / assoc_b
    best = int(np.argmin(costs))
    labels = cands[best][1].astype(np.int64)
    return labels, float(costs[best]), [(c[0], float(cost)) for c, cost in zip(cands, costs)]


def discretize_kmeans(vectors, k_seg: int, seed: int = 0, restarts: int = 10, max_iter: int = 100,
                      row_normalize: bool = False) -> np.ndarray:
    """k-means (k-means++ seeding, best of ``restarts``) on the spectral embedding."""
    from sklearn.cluster import KMeans

    emb = np.asarray(vectors, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[:, None]
    if emb.shape[1] < k_seg - 1:
        raise ValueError(f"need at least {k_seg - 1} embedding dimensions, got {emb.shape[1]}")
    if row_normalize:
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        emb = emb / np.maximum(norms, 1e-300)
    # scale-free: the eigenvectors are tiny when degrees are large
    emb = emb / max(float(np.abs(emb).max()), 1e-300)
    if np.unique(emb, axis=0).shape[0] < k_seg:
        raise DegenerateGraphError(f"embedding has fewer than {k_seg} distinct rows")
    km = KMeans(n_clusters=k_seg, init="k-means++", n_init=restarts, max_iter=max_iter, random_state=seed)
    return relabel_contiguous(km.fit_predict(emb))


def recursive_split(op: CutOperator, cfg: SegmentConfig):
    """Repeated two-way splits of the largest segment, each on its restricted graph.

    Returns ``(labels, split_costs)``.
    """
    labels = np.zeros(op.n, dtype=np.int64)
    frozen: set[int] = set()
    split_costs = []
    while labels.max() + 1 < cfg.num_segments:
        sizes = np.bincount(labels)
        order = [s for s in np.argsort(-sizes, kind="stable") if s not in frozen and sizes[s] >= 2]
        if not order:
            break
        seg = int(order[0])
        mask = labels == seg
        sub = MaskedOperator(op, mask)
        try:
            eig = ncut_eigs(sub, cfg.solver(k=1))
            side, cost, _ = discretize_twoway(eig.vectors[:, 1], sub, cfg.thresholds_per_split)
        except (DegenerateGraphError, ValueError) as exc:
            log.info("segment %d cannot be split: %s", seg, exc)
            frozen.add(seg)
            continue
        still_required = labels.max() + 1 < cfg.num_segments
        if not (cost < cfg.ncut_stop_threshold or still_required):
            frozen.add(seg)
            continue
        idx = np.flatnonzero(mask)
        labels[idx[side == 1]] = labels.max() + 1
        split_costs.append(cost)
    return relabel_contiguous(labels), split_costs


def build_operator(img: Image, cfg: SegmentConfig) -> CutOperator:
    if cfg.pipeline == "cond_ncut":
        guidance = img
    else:
        guidance = to_grayscale(img)
    if float(np.ptp(guidance.data)) < 1e-12:
        raise DegenerateGraphError("graph is degenerate: the image is constant, so no cut is preferred")
    if cfg.pipeline == "dense_ncut":
        if guidance.n > cfg.max_dense_pixels and cfg.affinity.radius is not None and cfg.keep_ratio >= 1.0:
            # same W, applied window by window instead of stored
            return BruteBilateralOperator(guidance, cfg.affinity)
        dense = build_dense_affinity(guidance, cfg.affinity, max_pixels=cfg.max_dense_pixels)
        if cfg.keep_ratio < 1.0:
            dense = random_sparsify(dense, cfg.keep_ratio, cfg.seed)
        return dense.operator()
    if cfg.pipeline == "fast_ncut":
        aff = cfg.affinity
        grid = GridConfig(aff.sigma_x, aff.sigma_i, sampling=cfg.grid_sampling)
        return GridOperator(guidance, grid, deterministic=cfg.deterministic)
    return NlmOperator(guidance, cfg.affinity)


def segment(img: Image, cfg: SegmentConfig, op: CutOperator | None = None) -> SegmentationResult:
    """Run the pipeline; ``op`` may be passed in to reuse an operator already built for ``img``."""
    timing = {}
    t0 = time.perf_counter()
    op = build_operator(img, cfg) if op is None else op
    apps_before = op.applications
    op.degree()
    timing["build_ms"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    eig = ncut_eigs(op, cfg.solver())
    timing["eigensolve_ms"] = (time.perf_counter() - t0) * 1e3
    if not eig.converged[1:].any():
        raise DegenerateGraphError("graph is degenerate: no nontrivial eigenpair converged")

    t0 = time.perf_counter()
    split_costs = []
    if cfg.discretization == "kmeans":
        emb = eig.vectors[:, 1 : 1 + cfg.eigvecs]
        flat = discretize_kmeans(emb, cfg.num_segments, cfg.seed, cfg.kmeans_restarts, cfg.kmeans_max_iter,
                                 cfg.row_normalize)
    elif cfg.num_segments == 2:
        flat, cost, _ = discretize_twoway(eig.vectors[:, 1], op, cfg.thresholds_per_split)
        flat = relabel_contiguous(flat)
        split_costs.append(cost)
    else:
        flat, split_costs = recursive_split(op, cfg)
    timing["discretize_ms"] = (time.perf_counter() - t0) * 1e3

    labels = LabelMap.from_flat(flat, img.width, img.height)
    t0 = time.perf_counter()
    cost = ncut_cost(op, labels) if labels.num_segments >= 2 else 0.0
    timing["score_ms"] = (time.perf_counter() - t0) * 1e3
    return SegmentationResult(
        labels=labels,
        eigen=eig,
        ncut_cost=cost,
        split_costs=split_costs,
        timing=timing,
        filter_applications=op.applications - apps_before,
    )


def default_config(pipeline: str, height: int, **overrides) -> SegmentConfig:
    """Pipeline defaults used by the command line.

    ``fast_ncut`` takes ``sigma_x = height / 32``; ``dense_ncut`` uses a
    15-pixel radius; ``cond_ncut`` uses 5x5 Gaussian-weighted patches.
    """
    sigma_i = overrides.pop("sigma_i", 0.1)
    sigma_x = overrides.pop("sigma_x", None)
    if pipeline == "cond_ncut":
        patch = PatchConfig(
            patch_radius=overrides.pop("patch_radius", 2),
            sigma_n=overrides.pop("sigma_n", 0.3),
            sigma_x=sigma_x or max(height / 32.0, 1.0),
            search_radius=overrides.pop("search_radius", 10),
        )
        return SegmentConfig(pipeline=pipeline, affinity=patch, **overrides)
    radius = overrides.pop("radius", 15 if pipeline == "dense_ncut" else None)
    aff = AffinityConfig(sigma_x=sigma_x or max(height / 32.0, 1.0), sigma_i=sigma_i, radius=radius)
    return SegmentConfig(pipeline=pipeline, affinity=aff, **overrides)


__all__ = [
    "SegmentConfig",
    "SegmentationResult",
    "ncut_cost",
    "discretize_twoway",
    "discretize_kmeans",
    "recursive_split",
    "build_operator",
    "segment",
    "default_config",
]
