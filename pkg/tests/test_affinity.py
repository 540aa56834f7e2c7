import numpy as np
import pytest

from filtercut.affinity import (
    AffinityConfig,
    OracleSizeError,
    PatchConfig,
    brute_bilateral,
    brute_nlm,
    build_dense_affinity,
    dense_apply,
    dense_ncut_solve,
    patch_weight,
    pixel_weight,
    random_sparsify,
    rayleigh_quotient,
)
from filtercut.image import Image

from conftest import random_gray

# frozen oracle values, each from hand evaluation of the Gaussian weights
W_HALF = 0.6065306597126334  # exp(-0.5)
PAIR_LAMBDA2 = 0.7550813375962908  # 2w/(1+w), w = exp(-0.5)
PAIR_MU2 = 0.2449186624037092  # (1-w)/(1+w)


def two_pixel():
    return build_dense_affinity(Image(np.array([[[0.5], [0.5]]])), AffinityConfig(1.0, 0.1))


def test_pixel_weight_examples():
    cfg = AffinityConfig(sigma_x=1.0, sigma_i=0.1)
    assert pixel_weight(cfg, (3, 4), (3, 4), 0.2, 0.2) == 1.0
    assert pixel_weight(cfg, (0, 0), (1, 1), 0.3, 0.4) == pytest.approx(0.22313016014842982, abs=1e-12)
    assert pixel_weight(AffinityConfig(1.0, 0.1, radius=1), (0, 0), (0, 2), 0.5, 0.5) == 0.0


def test_patch_weight_clamped_example():
    img = Image(np.array([[[0.0], [1.0], [0.0]]]))
    cfg = PatchConfig(patch_radius=1, sigma_n=1.0, sigma_x=1e12, search_radius=5, gaussian_patch_weighting=False)
    # square 3x3 patches on a one-row image: clamping repeats the row three
    # times, so each row contributes |{0,0,1} - {1,0,0}|^2 = 2
    assert patch_weight(cfg, img, 0, 2) == pytest.approx(np.exp(-3.0), abs=1e-15)
    one_row = PatchConfig(patch_radius=1, sigma_n=np.sqrt(3.0), sigma_x=1e12, gaussian_patch_weighting=False)
    assert patch_weight(one_row, img, 0, 2) == pytest.approx(0.36787944117144233, abs=1e-12)
    assert patch_weight(cfg, img, 1, 1) == 1.0


def test_patch_weight_constant_image_is_spatial():
    img = Image(np.full((4, 4, 3), 0.3))
    cfg = PatchConfig(sigma_x=2.0)
    assert patch_weight(cfg, img, 0, 5) == pytest.approx(np.exp(-2 / 8), abs=1e-15)


def test_dense_small_examples():
    one = build_dense_affinity(Image(np.array([[[0.4]]])), AffinityConfig(1.0, 0.1))
    assert one.w.tolist() == [[1.0]] and one.d.tolist() == [1.0]
    a = two_pixel()
    assert a.w[0, 1] == pytest.approx(W_HALF, abs=1e-15)
    np.testing.assert_allclose(a.d, [1 + W_HALF] * 2, atol=1e-15)
    np.testing.assert_allclose(dense_apply(a, [1.0, 0.0]), [1.0, W_HALF], atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_dense_invariants(seed):
    img = random_gray(7, seed)
    for cfg in (AffinityConfig(2.0, 0.2), AffinityConfig(1.5, 0.1, radius=2), PatchConfig(1, 0.5, 2.0, 3)):
        a = build_dense_affinity(img, cfg)
        assert np.array_equal(a.w, a.w.T)
        assert np.all(np.diag(a.w) == 1.0) and a.w.min() >= 0.0 and a.w.max() <= 1.0
        assert np.all(a.d >= 1.0)
        np.testing.assert_allclose(dense_apply(a, np.ones(a.n)), a.d, rtol=1e-12)
        stoch = dense_apply(a, np.full(a.n, 0.7)) / a.d
        np.testing.assert_allclose(stoch, 0.7, rtol=1e-12)


def test_dense_cap():
    with pytest.raises(OracleSizeError):
        build_dense_affinity(random_gray(9, 0), AffinityConfig(1.0, 0.1), max_pixels=80)
    build_dense_affinity(random_gray(9, 0), AffinityConfig(1.0, 0.1), max_pixels=81)


def test_dense_apply_size_mismatch():
    with pytest.raises(ValueError):
        dense_apply(two_pixel(), np.ones(3))


def test_near_identity_limit():
    img = Image(np.linspace(0, 1, 16).reshape(4, 4, 1))
    a = build_dense_affinity(img, AffinityConfig(1.0, 1e-3, radius=1))
    v = np.random.default_rng(0).standard_normal(16)
    np.testing.assert_allclose(dense_apply(a, v), v, atol=1e-12)


def test_brute_bilateral_trivial_cases():
    cfg = AffinityConfig(1.5, 0.1, radius=3)
    img = random_gray(6, 3)
    num, den = brute_bilateral(img, np.full(36, 2.5), cfg)
    np.testing.assert_allclose(num, 2.5 * den, rtol=1e-15)
    num, den = brute_bilateral(Image(np.array([[[0.3]]])), np.array([4.0]), cfg)
    assert num.tolist() == [4.0] and den.tolist() == [1.0]
    with pytest.raises(ValueError):
        brute_bilateral(img, np.ones(36), AffinityConfig(1.0, 0.1))


def test_brute_bilateral_block_matches_columns():
    cfg = AffinityConfig(1.5, 0.1, radius=2)
    img = random_gray(6, 4)
    vs = np.random.default_rng(1).standard_normal((36, 3))
    block, _ = brute_bilateral(img, vs, cfg)
    for c in range(3):
        np.testing.assert_allclose(block[:, c], brute_bilateral(img, vs[:, c], cfg)[0], rtol=0, atol=1e-14)


def test_brute_nlm_trivial_cases():
    img = Image(np.full((5, 5, 1), 0.4))
    cfg = PatchConfig(patch_radius=1, sigma_n=0.3, sigma_x=2.0, search_radius=2)
    num, den = brute_nlm(img, np.full(25, 3.0), cfg)
    np.testing.assert_allclose(num / den, 3.0, rtol=1e-15)
    v = np.arange(25.0)
    num, den = brute_nlm(random_gray(5, 0), v, PatchConfig(search_radius=0))
    np.testing.assert_array_equal(num, v)
    np.testing.assert_array_equal(den, np.ones(25))


def test_random_sparsify():
    a = build_dense_affinity(random_gray(8, 0), AffinityConfig(3.0, 0.5))
    assert random_sparsify(a, 1.0, 0) is a
    s1 = random_sparsify(a, 0.3, 7)
    s2 = random_sparsify(a, 0.3, 7)
    assert np.array_equal(s1.w, s2.w) and np.array_equal(s1.w, s1.w.T)
    assert np.all(np.diag(s1.w) == 1.0)
    np.testing.assert_allclose(s1.d, s1.w.sum(axis=1))
    pairs = a.n * (a.n - 1) // 2
    counts = [np.count_nonzero(np.triu(random_sparsify(a, 0.3, seed).w, 1)) for seed in range(20)]
    sd = np.sqrt(pairs * 0.3 * 0.7)
    assert all(abs(c - 0.3 * pairs) <= 3 * sd for c in counts)
    with pytest.raises(ValueError):
        random_sparsify(a, 0.0, 0)


def test_dense_solve_two_pixel_closed_form():
    eig = dense_ncut_solve(two_pixel(), 2)
    np.testing.assert_allclose(eig.mu, [1.0, PAIR_MU2], atol=1e-12)
    assert eig.lam[1] == pytest.approx(PAIR_LAMBDA2, abs=1e-12)
    y2 = eig.vectors[:, 1]
    assert y2[0] == pytest.approx(-y2[1], rel=1e-12)
    with pytest.raises(ValueError):
        dense_ncut_solve(two_pixel(), 3)


def test_dense_solve_block_diagonal():
    img = Image(np.array([[[0.0], [0.0], [1.0], [1.0]]]))
    a = build_dense_affinity(img, AffinityConfig(1.0, 0.01))
    eig = dense_ncut_solve(a, 2)
    assert eig.lam[1] == pytest.approx(0.0, abs=1e-12)
    y = eig.vectors[:, 1]
    assert np.sign(y[0]) == np.sign(y[1]) != np.sign(y[2]) == np.sign(y[3])


@pytest.mark.parametrize("seed", range(3))
def test_dense_solve_rayleigh(seed):
    a = build_dense_affinity(random_gray(6, seed), AffinityConfig(1.5, 0.2))
    eig = dense_ncut_solve(a, 4)
    for j in range(4):
        assert rayleigh_quotient(a, eig.vectors[:, j]) == pytest.approx(eig.lam[j], abs=1e-10)
    assert np.all(eig.lam >= -1e-10) and np.all(eig.lam <= 2 + 1e-10)
    assert eig.lam[0] == pytest.approx(0.0, abs=1e-10)
    y1 = eig.vectors[:, 0]
    assert np.ptp(y1) <= 1e-10 * np.abs(y1).max()


def test_rayleigh_examples():
    a = two_pixel()
    assert rayleigh_quotient(a, [2.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
    assert rayleigh_quotient(a, [1.0, -1.0]) == pytest.approx(PAIR_LAMBDA2, abs=1e-12)
    with pytest.raises(ValueError):
        rayleigh_quotient(a, [0.0, 0.0])


def test_triplet_dump(tmp_path):
    a = two_pixel()
    a.dump_triplets(tmp_path / "w.txt")
    rows = (tmp_path / "w.txt").read_text().split("\n")
    assert len([r for r in rows if r.strip()]) == 4
