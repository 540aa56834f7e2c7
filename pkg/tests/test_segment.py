import numpy as np
import pytest

from filtercut.affinity import AffinityConfig, build_dense_affinity, dense_apply
from filtercut.grid import GridConfig, GridOperator
from filtercut.image import Image, LabelMap
from filtercut.operators import DegenerateGraphError, MaskedOperator, MatrixOperator
from filtercut.segment import (
    SegmentConfig,
    default_config,
    discretize_kmeans,
    discretize_twoway,
    ncut_cost,
    recursive_split,
    segment,
)
from filtercut.synthetic import label_agreement, two_region

from conftest import random_gray

W_HALF = np.exp(-0.5)


def blocks(sizes, inside=0.9, across=0.0):
    n = sum(sizes)
    w = np.full((n, n), across)
    start = 0
    for s in sizes:
        w[start : start + s, start : start + s] = inside
        start += s
    np.fill_diagonal(w, 1.0)
    return MatrixOperator(w)


def test_ncut_cost_examples():
    assert ncut_cost(blocks([3, 3]), [0, 0, 0, 1, 1, 1]) == pytest.approx(0.0, abs=1e-15)
    pair = MatrixOperator([[1.0, W_HALF], [W_HALF, 1.0]])
    assert ncut_cost(pair, [0, 1]) == pytest.approx(0.7550813375962908, abs=1e-12)
    with pytest.raises(ValueError):
        ncut_cost(pair, [0, 0])
    with pytest.raises(ValueError):
        ncut_cost(blocks([2, 2]), [0, 0, 2, 2])
    op = blocks([2, 2, 2], across=0.3)
    assert ncut_cost(op, [0, 1, 2, 0, 1, 2]) <= 3


def test_ncut_cost_one_application_per_segment():
    op = blocks([2, 2, 2], across=0.1)
    op.degree()
    before = op.applications
    ncut_cost(op, LabelMap(np.array([[0, 0, 1, 1, 2, 2]])))
    assert op.applications - before == 3


def test_twoway_tight_blocks():
    op = blocks([2, 2], inside=0.95, across=0.01)
    labels, cost, costs = discretize_twoway(np.array([0.5, 0.4, -0.3, -0.6]), op, 32)
    assert labels.tolist() == [1, 1, 0, 0]
    assert cost == min(c for _, c in costs)
    flipped, cost_f, _ = discretize_twoway(np.array([-0.5, -0.4, 0.3, 0.6]), op, 32)
    assert label_agreement(flipped, labels) == 1.0 and cost_f == pytest.approx(cost)


def test_twoway_cost_matches_reevaluation():
    a = build_dense_affinity(random_gray(6, 0), AffinityConfig(1.5, 0.2))
    y = np.random.default_rng(1).standard_normal(a.n)
    labels, cost, _ = discretize_twoway(y, a.operator(), 16)
    assert cost == pytest.approx(ncut_cost(a.operator(), labels), rel=1e-12)


def test_twoway_constant_vector():
    with pytest.raises(DegenerateGraphError):
        discretize_twoway(np.ones(5), blocks([5]), 8)


def test_kmeans_recovery_and_determinism():
    emb = np.repeat(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]), 5, axis=0)
    labels = discretize_kmeans(emb, 3, seed=3)
    assert label_agreement(labels, np.repeat([0, 1, 2], 5)) == 1.0
    assert np.array_equal(labels, discretize_kmeans(emb, 3, seed=3))
    pair = discretize_kmeans(np.array([0.7, -0.7]), 2)
    assert sorted(pair.tolist()) == [0, 1]
    with pytest.raises(DegenerateGraphError):
        discretize_kmeans(np.ones((4, 1)), 2)
    with pytest.raises(ValueError):
        discretize_kmeans(np.ones((4, 1)), 3)


def test_recursive_split_components():
    op = blocks([4, 3, 5])
    cfg = SegmentConfig(pipeline="dense_ncut", affinity=AffinityConfig(1.0, 0.1), num_segments=3,
                        discretization="twoway")
    labels, costs = recursive_split(op, cfg)
    assert label_agreement(labels, np.repeat([0, 1, 2], [4, 3, 5])) == 1.0
    assert all(c == pytest.approx(0.0, abs=1e-9) for c in costs)


def test_recursive_split_two_equals_single_twoway():
    img, _ = two_region(16, seed=2)
    cfg = default_config("dense_ncut", 16, radius=None, sigma_x=2.0, discretization="twoway")
    res = segment(img, cfg)
    op = build_dense_affinity(img, cfg.affinity).operator()
    single, _, _ = discretize_twoway(res.eigen.vectors[:, 1], op, cfg.thresholds_per_split)
    assert label_agreement(res.labels, single) == 1.0


def test_masked_grid_restriction_close_to_dense_submatrix():
    img = random_gray(16, 4)
    dense = build_dense_affinity(img, AffinityConfig(2.0, 0.1))
    grid = GridOperator(img, GridConfig(2.0, 0.1))
    mask = np.zeros(img.n, dtype=bool)
    mask[: img.n // 2 + 7] = True
    idx = np.flatnonzero(mask)
    v = np.random.default_rng(0).uniform(0, 1, idx.size)
    ref = dense.w[np.ix_(idx, idx)] @ v
    fast = MaskedOperator(grid, mask).apply_w(v)
    exact = MaskedOperator(dense.operator(), mask).apply_w(v)
    assert np.linalg.norm(fast - ref) / np.linalg.norm(ref) <= 0.05
    assert np.max(np.abs(exact - ref)) <= 1e-12


@pytest.mark.parametrize("pipeline", ["dense_ncut", "fast_ncut", "cond_ncut"])
def test_segment_two_region(pipeline):
    img, truth = two_region(32, seed=0)
    overrides = {"radius": None} if pipeline == "dense_ncut" else {}
    res = segment(img, default_config(pipeline, 32, sigma_x=2.0, **overrides))
    assert label_agreement(res.labels, truth) == 1.0
    assert res.ncut_cost >= 0.0
    assert set(res.timing) == {"build_ms", "eigensolve_ms", "discretize_ms", "score_ms"}
    assert res.filter_applications > 0


def test_fast_cost_close_to_dense_cost():
    img, _ = two_region(24, seed=1)
    fast = segment(img, default_config("fast_ncut", 24, sigma_x=2.0))
    dense_cfg = default_config("dense_ncut", 24, radius=None, sigma_x=2.0)
    dense = segment(img, dense_cfg)
    oracle = build_dense_affinity(img, dense_cfg.affinity).operator()
    assert ncut_cost(oracle, fast.labels) <= 1.1 * ncut_cost(oracle, dense.labels) + 1e-12


def test_segment_constant_image_is_degenerate():
    img = Image(np.full((8, 8, 1), 0.4))
    for pipeline in ("dense_ncut", "fast_ncut", "cond_ncut"):
        with pytest.raises(DegenerateGraphError, match="degenerate"):
            segment(img, default_config(pipeline, 8))


def test_segment_multiway_twoway_mode():
    rng = np.random.default_rng(0)
    data = np.repeat(np.array([0.1, 0.5, 0.9]), [6, 6, 6])[None, :].repeat(12, axis=0)
    img = Image(np.clip(data + rng.normal(0, 0.01, data.shape), 0, 1))
    truth = np.repeat([0, 1, 2], 6)[None, :].repeat(12, axis=0)
    cfg = default_config("fast_ncut", 12, sigma_x=2.0, num_segments=3, discretization="twoway")
    res = segment(img, cfg)
    # thresholds sit on a fixed quantile grid, so a column next to a gap can land on the wrong side
    assert label_agreement(res.labels, truth) >= 0.97
    assert res.labels.num_segments == 3 and len(res.split_costs) == 2


def test_config_validation():
    aff = AffinityConfig(1.0, 0.1)
    with pytest.raises(ValueError):
        SegmentConfig(pipeline="other", affinity=aff)
    with pytest.raises(ValueError):
        SegmentConfig(pipeline="fast_ncut", affinity=aff, num_segments=1)
    with pytest.raises(ValueError):
        SegmentConfig(pipeline="fast_ncut", affinity=aff, num_segments=4, num_eigvecs=2)
    with pytest.raises(TypeError):
        SegmentConfig(pipeline="cond_ncut", affinity=aff)


def test_default_config_values():
    cfg = default_config("fast_ncut", 128)
    assert cfg.affinity.sigma_x == 4.0 and cfg.affinity.sigma_i == 0.1 and cfg.affinity.radius is None
    assert default_config("dense_ncut", 64).affinity.radius == 15
    cond = default_config("cond_ncut", 64).affinity
    assert (cond.patch_radius, cond.sigma_n, cond.search_radius) == (2, 0.3, 10)
    assert cfg.eigvecs == cfg.num_segments == 2
    assert (cfg.kmeans_restarts, cfg.kmeans_max_iter, cfg.thresholds_per_split) == (10, 100, 32)
    assert cfg.ncut_stop_threshold == 0.06


def test_windowed_fallback_above_cap():
    img, truth = two_region(20, seed=0)
    cfg = default_config("dense_ncut", 20, radius=6, sigma_x=2.0, max_dense_pixels=100)
    res = segment(img, cfg)
    assert label_agreement(res.labels, truth) == 1.0


def test_prebuilt_operator_counts_only_its_own_work():
    img, _ = two_region(12, seed=0)
    cfg = default_config("fast_ncut", 12, sigma_x=2.0)
    op = GridOperator(img, GridConfig(2.0, 0.1))
    op.apply_w(np.ones(img.n))
    res = segment(img, cfg, op=op)
    assert res.filter_applications == op.applications - 1
    np.testing.assert_allclose(dense_apply(build_dense_affinity(img, AffinityConfig(2.0, 0.1)), np.ones(img.n)).sum(),
                               op.degree().sum(), rtol=0.05)
