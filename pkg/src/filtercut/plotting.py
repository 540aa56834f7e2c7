"""Report figures rendered with matplotlib's Agg canvas straight to PNG files."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .image import _atomic_write

PIPELINE_STYLE = {
    "baseline": dict(color="#b2182b", marker="o", label="windowed baseline"),
    "grid": dict(color="#2166ac", marker="s", label="bilateral grid"),
}


def _new_figure(ncols: int = 1, width: float = 4.2, height: float = 3.2):
    fig = Figure(figsize=(width * ncols, height), dpi=100)
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, ncols, squeeze=False)[0]
    for ax in axes:
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
        ax.grid(True, alpha=0.3, linewidth=0.6)
    return fig, axes


def save_figure(fig: Figure, path) -> Path:
    """Render to PNG in memory, then write atomically."""
    path = Path(path)
    buf = io.BytesIO()
    fig.tight_layout()
    # no timestamp/version metadata so reruns produce the same bytes
    fig.savefig(buf, format="png", metadata={"Software": None})
    _atomic_write(path, buf.getvalue())
    return path


def bench_figure(rows, path) -> Path:
    """Median wall time per size for each pipeline, and the resulting speedup.

    ``rows`` are dicts with keys ``size``, ``pipeline`` and ``wall_ms``.
    """
    sizes = sorted({int(r["size"]) for r in rows})
    medians = {}
    for name in PIPELINE_STYLE:
        medians[name] = [
            float(np.median([r["wall_ms"] for r in rows if r["pipeline"] == name and int(r["size"]) == s]))
            for s in sizes
        ]
    fig, (ax_t, ax_s) = _new_figure(ncols=2)
    for name, style in PIPELINE_STYLE.items():
        ax_t.plot(sizes, medians[name], **style)
    ax_t.set_yscale("log")
    ax_t.set_xlabel("image side (px)")
    ax_t.set_ylabel("median eigensolve wall time (ms)")
    ax_t.set_xticks(sizes)
    ax_t.legend(frameon=False, fontsize=8)

    speedup = np.asarray(medians["baseline"]) / np.maximum(np.asarray(medians["grid"]), 1e-9)
    pos = np.arange(len(sizes))
    ax_s.bar(pos, speedup, color="#4d9221")
    ax_s.set_xticks(pos, [str(s) for s in sizes])
    ax_s.axhline(1.0, color="k", linewidth=0.8)
    ax_s.set_xlabel("image side (px)")
    ax_s.set_ylabel("speedup (baseline / grid)")
    for i, val in enumerate(speedup):
        ax_s.annotate(f"{val:.1f}x", (i, val), ha="center", va="bottom", fontsize=8)
    return save_figure(fig, path)


def trace_figure(values, path, ylabel: str = "within-region variance") -> Path:
    """One curve over filter iterations (log scale when strictly positive)."""
    values = np.asarray(values, dtype=np.float64)
    fig, (ax,) = _new_figure()
    ax.plot(np.arange(1, values.size + 1), values, color="#2166ac", marker=".", markersize=3)
    if np.all(values > 0):
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    return save_figure(fig, path)


def spectrum_figure(lam_dense, lam_fast, path) -> Path:
    """Cut eigenvalues of the dense oracle against the fast path."""
    lam_dense = np.asarray(lam_dense, dtype=np.float64)
    lam_fast = np.asarray(lam_fast, dtype=np.float64)
    idx = np.arange(1, lam_dense.size + 1)
    fig, (ax,) = _new_figure()
    ax.plot(idx, lam_dense, "o-", color="#b2182b", label="dense")
    ax.plot(idx, lam_fast, "s--", color="#2166ac", label="grid")
    ax.set_xticks(idx)
    ax.set_xlabel("eigenpair j")
    ax.set_ylabel("cut eigenvalue")
    ax.legend(frameon=False, fontsize=8)
    return save_figure(fig, path)
