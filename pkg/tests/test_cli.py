import csv
import json

import numpy as np
import pytest

from filtercut.cli import METRIC_KEYS, bench_rows, main
from filtercut.image import Image, load_image, load_labels, save_image
from filtercut.synthetic import label_agreement, two_region


@pytest.fixture
def two_region_png(tmp_path):
    img, truth = two_region(32, seed=0)
    path = tmp_path / "in.png"
    save_image(img, path)
    return path, truth


def run(*argv):
    return main([str(a) for a in argv])


def test_fast_ncut_outputs(tmp_path, two_region_png):
    path, truth = two_region_png
    out = tmp_path / "out"
    assert run("fast-ncut", "--input", path, "--out-dir", out, "--segments", 2) == 0
    masks = [load_image(out / f"mask_{i}.pgm").plane for i in range(2)]
    assert np.array_equal(masks[0] + masks[1], np.ones((32, 32)))
    assert label_agreement(load_labels(out / "labels.png"), truth) == 1.0
    overlay = load_image(out / "overlay.png")
    assert overlay.channels == 3
    metrics = json.loads((out / "metrics.json").read_text())
    assert tuple(metrics) == METRIC_KEYS
    assert metrics["timing_ms"] is not None and metrics["lambda_delta"] is None
    assert not list(out.glob("*.tmp*"))


@pytest.mark.parametrize("argv", [
    ["fast-ncut", "--out-dir", "x", "--segments", "2"],
    ["fast-ncut", "--input", "IN", "--out-dir", "x", "--segments", "1"],
    ["fast-ncut", "--input", "IN", "--out-dir", "x", "--segments", "2", "--sigma-spatial", "2",
     "--sigma-spatial-frac", "0.1"],
    ["ncut", "--input", "IN", "--out-dir", "x", "--segments", "3", "--eigvecs", "1"],
    ["filter", "--input", "IN", "--out-dir", "x", "--method", "median"],
    ["bench", "--sizes", "4,x"],
    [],
])
def test_bad_arguments_exit_1(tmp_path, two_region_png, argv, capsys):
    argv = [str(two_region_png[0]) if a == "IN" else a for a in argv]
    argv = [str(tmp_path / a) if a == "x" else a for a in argv]
    assert main(argv) == 1
    assert capsys.readouterr().err
    assert not (tmp_path / "x").exists() or not any((tmp_path / "x").iterdir())


def test_io_errors_exit_2(tmp_path):
    assert run("fast-ncut", "--input", tmp_path / "missing.png", "--out-dir", tmp_path / "o", "--segments", 2) == 2
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P5\n4 4\n255\n\x00")
    assert run("filter", "--input", bad, "--out-dir", tmp_path / "o") == 2


def test_constant_image_exit_3(tmp_path):
    path = tmp_path / "flat.pgm"
    save_image(Image(np.full((8, 8, 1), 0.5)), path)
    assert run("fast-ncut", "--input", path, "--out-dir", tmp_path / "o", "--segments", 2) == 3
    assert not (tmp_path / "o" / "labels.png").exists()


@pytest.mark.parametrize("method", ["bilateral", "bilateral-brute", "nlm"])
def test_filter_constant_image_unchanged(tmp_path, method):
    path = tmp_path / "c.png"
    save_image(Image(np.full((10, 10, 1), 100 / 255)), path)
    assert run("filter", "--input", path, "--out-dir", tmp_path / method, "--method", method) == 0
    assert np.array_equal(load_image(tmp_path / method / "filtered.png").data, load_image(path).data)


def test_filter_bilateral_vs_brute(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "r.pgm"
    save_image(Image(rng.uniform(0.2, 0.8, (24, 24, 1))), path)
    for method in ("bilateral", "bilateral-brute"):
        assert run("filter", "--input", path, "--out-dir", tmp_path / method, "--method", method,
                   "--sigma-spatial", 2) == 0
    a = load_image(tmp_path / "bilateral" / "filtered.png").flat
    b = load_image(tmp_path / "bilateral-brute" / "filtered.png").flat
    assert np.max(np.abs(a - b) / b) <= 0.05


def test_filter_iterations_trace(tmp_path, two_region_png):
    path, _ = two_region_png
    out = tmp_path / "f"
    assert run("filter", "--input", path, "--out-dir", out, "--iterations", 6, "--deterministic") == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert len(metrics["filter_variance"]) == 6 and metrics["timing_ms"] is None
    assert (out / "filter_trace.png").stat().st_size > 0


def test_compare_small_image(tmp_path):
    img, _ = two_region(24, seed=0)
    path = tmp_path / "c.pgm"
    save_image(img, path)
    metrics_path = tmp_path / "m.json"
    assert run("compare", "--input", path, "--sigma-spatial", 2, "--metrics-json", metrics_path,
               "--out-dir", tmp_path / "cmp") == 0
    m = json.loads(metrics_path.read_text())
    assert tuple(m) == METRIC_KEYS
    assert abs(m["lambda_delta"][1]) <= 1e-2
    assert m["label_agreement"] == 1.0
    assert len(m["operator_rel_error"]) == 10
    assert m["speedup"] > 0
    assert (tmp_path / "cmp" / "spectrum.png").exists()


def test_compare_cap(tmp_path):
    ok = tmp_path / "64.pgm"
    save_image(two_region(64, seed=0)[0], ok)
    big = tmp_path / "65.pgm"
    save_image(two_region(65, seed=0)[0], big)
    assert run("compare", "--input", big) == 1
    assert run("compare", "--input", ok, "--deterministic", "--metrics-json", tmp_path / "m.json") == 0


def test_bench_csv_shape(tmp_path):
    out = tmp_path / "bench.csv"
    assert run("bench", "--sizes", "16,20", "--repeats", 2, "--radius", 3, "--csv", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["size", "pipeline", "wall_ms", "filter_apps", "lambda2"]
    assert len(rows) == 2 * 2 * 2
    assert out.with_suffix(".png").exists()


def test_bench_repeats_one():
    rows = bench_rows([16], repeats=1, radius=3)
    assert [r["pipeline"] for r in rows] == ["baseline", "grid"]
    assert all(r["wall_ms"] > 0 and r["filter_apps"] > 0 for r in rows)


def test_deterministic_runs_are_byte_identical(tmp_path, two_region_png):
    path, _ = two_region_png
    blobs = []
    for i in range(2):
        out = tmp_path / f"d{i}"
        assert run("fast-ncut", "--input", path, "--out-dir", out, "--segments", 2, "--seed", 5,
                   "--deterministic", "--metrics-json", tmp_path / f"m{i}.json") == 0
        blobs.append([(out / name).read_bytes() for name in ("labels.png", "mask_0.pgm", "overlay.png")])
    assert blobs[0] == blobs[1]
    a = json.loads((tmp_path / "m0.json").read_text())
    b = json.loads((tmp_path / "m1.json").read_text())
    a["command"] = b["command"] = None
    assert a == b
