"""Command-line front end.

Subcommands::

    filtercut ncut | fast-ncut | cond-ncut   segment an image
    filtercut filter                        run one of the filters on its own
    filtercut compare                       dense oracle against the grid path
    filtercut bench                         speedup sweep, CSV plus figure

Exit codes: 0 success, 1 bad arguments, 2 I/O failure, 3 degenerate graph.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .affinity import AffinityConfig, BruteBilateralOperator, OracleSizeError, PatchConfig
from .eigen import ncut_eigs
from .grid import GridConfig, GridOperator
from .image import (
    Image,
    ImageFormatError,
    LabelMap,
    _atomic_write,
    boundary_overlay,
    load_image,
    save_image,
    save_labels_png,
    to_grayscale,
)
from .nlm import NlmOperator
from .operators import DegenerateGraphError
from .segment import SegmentConfig, build_operator, default_config, ncut_cost, segment
from .synthetic import label_agreement, two_region

log = logging.getLogger("filtercut")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DEGENERATE = 0, 1, 2, 3

PIPELINE_OF = {"ncut": "dense_ncut", "fast-ncut": "fast_ncut", "cond-ncut": "cond_ncut"}

# every metrics file carries exactly these keys; missing values are null
METRIC_KEYS = (
    "command",
    "subcommand",
    "image",
    "config",
    "num_segments",
    "mu",
    "lambda",
    "residuals",
    "iterations",
    "filter_applications",
    "timing_ms",
    "ncut_cost",
    "filter_variance",
    "lambda_delta",
    "operator_rel_error",
    "cost_ratio",
    "label_agreement",
    "speedup",
)

CONFIG_KEYS = (
    "pipeline",
    "segments",
    "eigvecs",
    "sigma_spatial",
    "sigma_range",
    "radius",
    "patch_radius",
    "sigma_patch",
    "search_radius",
    "discretize",
    "seed",
    "deterministic",
    "method",
    "iterations",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return val


def _seed(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _size_list(text):
    try:
        sizes = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from None
    if not sizes or min(sizes) < 8:
        raise argparse.ArgumentTypeError("sizes must be integers >= 8")
    return sizes


def _add_kernel_flags(p):
    sig = p.add_mutually_exclusive_group()
    sig.add_argument("--sigma-spatial", type=_positive_float, help="spatial sigma in pixels")
    sig.add_argument("--sigma-spatial-frac", type=_positive_float,
                     help="spatial sigma as a fraction of image height (default 1/32)")
    p.add_argument("--sigma-range", type=_positive_float, default=0.1)
    p.add_argument("--radius", type=_positive_int, default=15, help="window radius of the windowed operators")
    p.add_argument("--patch-radius", type=int, default=2)
    p.add_argument("--sigma-patch", type=_positive_float, default=0.3)
    p.add_argument("--search-radius", type=_positive_int, default=10)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--metrics-json", type=Path)
    p.add_argument("--deterministic", action="store_true",
                   help="sequential reductions and no wall-clock values in the metrics")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="filtercut", description="Normalized-cut segmentation via edge-preserving filters.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    for name in PIPELINE_OF:
        p = sub.add_parser(name, help=f"segment an image with the {PIPELINE_OF[name]} pipeline")
        p.add_argument("--input", type=Path, required=True)
        p.add_argument("--out-dir", type=Path, required=True)
        p.add_argument("--segments", type=int, required=True)
        p.add_argument("--eigvecs", type=_positive_int)
        p.add_argument("--discretize", choices=("kmeans", "twoway"), default="kmeans")
        _add_kernel_flags(p)

    p = sub.add_parser("filter", help="apply a filter (normalized) to an image")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--method", choices=("bilateral", "bilateral-brute", "nlm"), default="bilateral")
    p.add_argument("--iterations", type=_positive_int, default=1)
    _add_kernel_flags(p)

    p = sub.add_parser("compare", help="dense oracle against the bilateral grid at matched sigmas")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--segments", type=int, default=2)
    p.add_argument("--eigvecs", type=_positive_int)
    p.add_argument("--discretize", choices=("kmeans", "twoway"), default="kmeans")
    p.add_argument("--max-pixels", type=_positive_int, default=4096)
    _add_kernel_flags(p)

    p = sub.add_parser("bench", help="windowed baseline against the grid path on synthetic images")
    p.add_argument("--sizes", type=_size_list, default=[64, 128, 256])
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--radius", type=_positive_int, default=15)
    p.add_argument("--csv", type=Path, default=Path("bench.csv"))
    p.add_argument("--sigma-range", type=_positive_float, default=0.1)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--no-figure", action="store_true")
    return parser


# -- shared helpers ----------------------------------------------------------


def _sigma_spatial(args, height: int) -> float:
    if args.sigma_spatial is not None:
        return float(args.sigma_spatial)
    frac = args.sigma_spatial_frac if args.sigma_spatial_frac is not None else 1.0 / 32.0
    return max(frac * height, 1.0)


def _config_echo(args, **extra) -> dict:
    echo = {key: getattr(args, key, None) for key in CONFIG_KEYS}
    echo.update(extra)
    return echo


def _empty_metrics(args, argv) -> dict:
    out = {key: None for key in METRIC_KEYS}
    out["command"] = ["filtercut", *argv]
    out["subcommand"] = args.subcommand
    return out


def _finite_list(arr):
    return None if arr is None else [float(x) for x in np.asarray(arr).reshape(-1)]


def _write_json(path: Path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=False) + "\n"
    _atomic_write(Path(path), text.encode("utf-8"))


def _load(path: Path) -> Image:
    img = load_image(path)
    log.info("loaded %s (%dx%d, %d channel%s)", path, img.width, img.height, img.channels,
             "" if img.channels == 1 else "s")
    return img


def _segment_config(args, img: Image, pipeline: str, radius=None) -> SegmentConfig:
    if args.segments < 2:
        raise UsageError("--segments must be >= 2")
    sigma_x = _sigma_spatial(args, img.height)
    overrides = dict(
        sigma_x=sigma_x,
        sigma_i=args.sigma_range,
        num_segments=args.segments,
        num_eigvecs=args.eigvecs,
        discretization=args.discretize,
        seed=args.seed,
        deterministic=args.deterministic,
    )
    if pipeline == "cond_ncut":
        overrides.update(patch_radius=args.patch_radius, sigma_n=args.sigma_patch, search_radius=args.search_radius)
    else:
        overrides["radius"] = radius
    try:
        return default_config(pipeline, img.height, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# -- segmentation ------------------------------------------------------------


def cmd_segment(args, argv) -> int:
    img = _load(args.input)
    pipeline = PIPELINE_OF[args.subcommand]
    cfg = _segment_config(args, img, pipeline, radius=args.radius if pipeline == "dense_ncut" else None)
    result = segment(img, cfg)
    for stage, ms in result.timing.items():
        log.info("%-14s %9.1f ms", stage, ms)

    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = result.labels
    save_labels_png(labels, out_dir / "labels.png")
    for seg in range(labels.num_segments):
        mask = Image(labels.mask(seg).astype(np.float64)[:, :, None])
        save_image(mask, out_dir / f"mask_{seg}.pgm")
    save_image(boundary_overlay(img, labels), out_dir / "overlay.png")

    metrics = _empty_metrics(args, argv)
    metrics["image"] = {"width": img.width, "height": img.height, "channels": img.channels}
    metrics["config"] = _config_echo(args, pipeline=pipeline, sigma_spatial=_sigma_spatial(args, img.height),
                                     eigvecs=cfg.eigvecs, radius=args.radius if pipeline == "dense_ncut" else None)
    metrics["num_segments"] = labels.num_segments
    _fill_eigen(metrics, result.eigen)
    metrics["filter_applications"] = result.filter_applications
    metrics["ncut_cost"] = float(result.ncut_cost)
    if not args.deterministic:
        metrics["timing_ms"] = {k: float(v) for k, v in result.timing.items()}
    metrics_path = args.metrics_json or out_dir / "metrics.json"
    _write_json(metrics_path, metrics)
    print(f"{labels.num_segments} segments, ncut cost {result.ncut_cost:.6g}, "
          f"lambda2 {result.eigen.lam[1]:.6g}, {result.filter_applications} filter applications")
    return EXIT_OK


def _fill_eigen(metrics: dict, eig) -> None:
    metrics["mu"] = _finite_list(eig.mu)
    metrics["lambda"] = _finite_list(eig.lam)
    metrics["residuals"] = _finite_list(eig.residuals)
    metrics["iterations"] = int(eig.iterations)


# -- filter ------------------------------------------------------------------


def _filter_operator(args, img: Image):
    sigma_x = _sigma_spatial(args, img.height)
    if args.method == "bilateral":
        return GridOperator(to_grayscale(img), GridConfig(sigma_x, args.sigma_range), deterministic=args.deterministic)
    if args.method == "bilateral-brute":
        return BruteBilateralOperator(to_grayscale(img), AffinityConfig(sigma_x, args.sigma_range, radius=args.radius))
    patch = PatchConfig(patch_radius=args.patch_radius, sigma_n=args.sigma_patch, sigma_x=sigma_x,
                        search_radius=args.search_radius)
    return NlmOperator(img, patch)


def filter_iterations(op, values: np.ndarray, iterations: int):
    """Yield ``D^-1 W`` applied 1, 2, ... ``iterations`` times to ``values``."""
    cur = np.asarray(values, dtype=np.float64)
    for _ in range(iterations):
        cur = op.filter(cur)
        yield cur


def cmd_filter(args, argv) -> int:
    img = _load(args.input)
    try:
        op = _filter_operator(args, img)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.perf_counter()
    variances = []
    out = img.pixels()
    for out in filter_iterations(op, img.pixels(), args.iterations):
        variances.append(float(np.var(out)))
    elapsed = (time.perf_counter() - t0) * 1e3

    args.out_dir.mkdir(parents=True, exist_ok=True)
    result = Image(np.clip(out, 0.0, 1.0).reshape(img.height, img.width, img.channels))
    save_image(result, args.out_dir / "filtered.png")
    if args.iterations > 1:
        from .plotting import trace_figure

        trace_figure(variances, args.out_dir / "filter_trace.png", ylabel="output variance")

    metrics = _empty_metrics(args, argv)
    metrics["image"] = {"width": img.width, "height": img.height, "channels": img.channels}
    metrics["config"] = _config_echo(args, sigma_spatial=_sigma_spatial(args, img.height))
    metrics["filter_applications"] = op.applications
    metrics["filter_variance"] = variances
    if not args.deterministic:
        metrics["timing_ms"] = {"filter_ms": elapsed}
    _write_json(args.metrics_json or args.out_dir / "metrics.json", metrics)
    print(f"{args.method}: {args.iterations} iteration(s), {op.applications} filter applications")
    return EXIT_OK


# -- compare -----------------------------------------------------------------


def operator_rel_errors(fast, dense, probes: int = 10, seed: int = 0) -> np.ndarray:
    """Relative L2 error of the normalized filter outputs on random probe vectors."""
    rng = np.random.default_rng(seed)
    vs = rng.standard_normal((dense.n, probes))
    ref = dense.filter(vs)
    got = fast.filter(vs)
    return np.linalg.norm(got - ref, axis=0) / np.linalg.norm(ref, axis=0)


def cmd_compare(args, argv) -> int:
    img = _load(args.input)
    if img.n > args.max_pixels:
        raise UsageError(f"compare needs the dense oracle, which is capped at {args.max_pixels} pixels; "
                         f"this image has {img.n} ({img.width}x{img.height})")
    dense_cfg = _segment_config(args, img, "dense_ncut", radius=None)
    dense_cfg = _replace(dense_cfg, max_dense_pixels=args.max_pixels)
    fast_cfg = _segment_config(args, img, "fast_ncut")
    dense_op = build_operator(img, dense_cfg)
    fast_op = build_operator(img, fast_cfg)
    dense_res = segment(img, dense_cfg, op=dense_op)
    fast_res = segment(img, fast_cfg, op=fast_op)
    errors = operator_rel_errors(fast_op, dense_op, probes=10, seed=args.seed)
    # score both partitions on the oracle graph
    fast_cost = _cost_on(dense_op, fast_res.labels)
    dense_cost = _cost_on(dense_op, dense_res.labels)

    metrics = _empty_metrics(args, argv)
    metrics["image"] = {"width": img.width, "height": img.height, "channels": img.channels}
    metrics["config"] = _config_echo(args, pipeline="dense_ncut+fast_ncut", radius=None,
                                     sigma_spatial=_sigma_spatial(args, img.height), eigvecs=fast_cfg.eigvecs)
    metrics["num_segments"] = fast_res.labels.num_segments
    _fill_eigen(metrics, fast_res.eigen)
    metrics["filter_applications"] = fast_res.filter_applications
    metrics["ncut_cost"] = fast_cost
    metrics["lambda_delta"] = _finite_list(np.abs(fast_res.eigen.lam - dense_res.eigen.lam))
    metrics["operator_rel_error"] = _finite_list(errors)
    metrics["cost_ratio"] = fast_cost / dense_cost if dense_cost > 0 else (1.0 if fast_cost == 0 else None)
    metrics["label_agreement"] = label_agreement(fast_res.labels, dense_res.labels)
    if not args.deterministic:
        dense_ms = sum(dense_res.timing.values())
        fast_ms = sum(fast_res.timing.values())
        metrics["timing_ms"] = {"dense_ms": dense_ms, "fast_ms": fast_ms}
        metrics["speedup"] = dense_ms / fast_ms
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        from .plotting import spectrum_figure

        spectrum_figure(dense_res.eigen.lam, fast_res.eigen.lam, args.out_dir / "spectrum.png")
    text = json.dumps(metrics, indent=2) + "\n"
    if args.metrics_json is not None:
        _atomic_write(args.metrics_json, text.encode("utf-8"))
    elif args.out_dir is not None:
        _atomic_write(args.out_dir / "metrics.json", text.encode("utf-8"))
    sys.stdout.write(text)
    return EXIT_OK


def _replace(cfg, **changes):
    from dataclasses import replace

    return replace(cfg, **changes)


def _cost_on(op, labels: LabelMap) -> float:
    return ncut_cost(op, labels) if labels.num_segments >= 2 else 0.0


# -- bench -------------------------------------------------------------------

BENCH_COLUMNS = ("size", "pipeline", "wall_ms", "filter_apps", "lambda2")


def bench_rows(sizes, repeats: int = 3, radius: int = 15, sigma_range: float = 0.1, seed: int = 0):
    """Timing rows for the windowed baseline and the grid path.

    The baseline cost is one timed windowed application multiplied by the
    number of applications its own eigensolve needed; that solve runs once
    per size.  The grid path is timed end to end (build plus eigensolve).
    """
    rows = []
    for size in sizes:
        img, _ = two_region(size, seed=seed)
        sigma_x = max(size / 32.0, 1.0)
        solver = default_config("fast_ncut", size).solver()

        base_op = BruteBilateralOperator(img, AffinityConfig(sigma_x, sigma_range, radius=radius))
        base_eig = ncut_eigs(base_op, solver)
        base_apps = base_op.applications
        probe = np.random.default_rng(seed).standard_normal(img.n)
        log.info("size %d: baseline eigensolve used %d applications (%d Lanczos steps)", size, base_apps,
                 base_eig.iterations)
        for _ in range(repeats):
            t0 = time.perf_counter()
            base_op.apply_w(probe)
            one = time.perf_counter() - t0
            rows.append(dict(size=size, pipeline="baseline", wall_ms=one * base_apps * 1e3, filter_apps=base_apps,
                             lambda2=float(base_eig.lam[1]), iterations=base_eig.iterations))
        for _ in range(repeats):
            t0 = time.perf_counter()
            op = GridOperator(img, GridConfig(sigma_x, sigma_range))
            eig = ncut_eigs(op, solver)
            wall = time.perf_counter() - t0
            rows.append(dict(size=size, pipeline="grid", wall_ms=wall * 1e3, filter_apps=op.applications,
                             lambda2=float(eig.lam[1]), iterations=eig.iterations))
    return rows


def bench_summary(rows) -> list[dict]:
    out = []
    for size in sorted({r["size"] for r in rows}):
        base = [r for r in rows if r["size"] == size and r["pipeline"] == "baseline"]
        grid = [r for r in rows if r["size"] == size and r["pipeline"] == "grid"]
        b = float(np.median([r["wall_ms"] for r in base]))
        g = float(np.median([r["wall_ms"] for r in grid]))
        out.append(dict(size=size, baseline_ms=b, grid_ms=g, speedup=b / g,
                        baseline_iterations=base[0]["iterations"], grid_iterations=grid[0]["iterations"],
                        baseline_apps=base[0]["filter_apps"], grid_apps=grid[0]["filter_apps"]))
    return out


def cmd_bench(args, argv) -> int:
    rows = bench_rows(args.sizes, args.repeats, args.radius, args.sigma_range, args.seed)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({**row, "wall_ms": f"{row['wall_ms']:.3f}", "lambda2": f"{row['lambda2']:.9g}"})
    _atomic_write(args.csv, buf.getvalue().encode("utf-8"))
    if not args.no_figure:
        from .plotting import bench_figure

        bench_figure(rows, args.csv.with_suffix(".png"))
    print("size  baseline_ms      grid_ms  speedup  base_steps  grid_steps")
    for s in bench_summary(rows):
        print(f"{s['size']:4d} {s['baseline_ms']:12.1f} {s['grid_ms']:12.1f} {s['speedup']:8.1f} "
              f"{s['baseline_iterations']:11d} {s['grid_iterations']:11d}")
    return EXIT_OK


COMMANDS = {
    "ncut": cmd_segment,
    "fast-ncut": cmd_segment,
    "cond-ncut": cmd_segment,
    "filter": cmd_filter,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.subcommand](args, argv)
    except (UsageError, OracleSizeError) as exc:
        print(f"filtercut: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateGraphError as exc:
        print(f"filtercut: degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (OSError, ImageFormatError) as exc:
        print(f"filtercut: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
