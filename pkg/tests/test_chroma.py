import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chromatrack.chroma import (
    Palette,
    decode,
    downsample_ab,
    fit_palette,
    kmeans_pp_init,
    lab_to_rgb,
    lab_to_rgb_float,
    lloyd,
    quantize,
    rgb_to_lab,
)
from chromatrack.errors import ValidationError


def test_black_is_origin():
    np.testing.assert_allclose(rgb_to_lab(np.zeros((1, 1, 3))), 0.0, atol=1e-12)


def test_white_point():
    lab = rgb_to_lab(np.full((1, 1, 3), 255))[0, 0]
    assert lab[0] == pytest.approx(100.0, abs=1e-9)
    assert abs(lab[1]) < 1e-6 and abs(lab[2]) < 1e-6


def test_mid_gray_matches_direct_formula():
    lab = rgb_to_lab(np.full((1, 1, 3), 119))[0, 0]
    # L = 116 * cbrt(Y) - 16 with Y the linearized gray level
    assert lab[0] == pytest.approx(50.034438792538225, abs=1e-9)
    assert abs(lab[1]) < 1e-6 and abs(lab[2]) < 1e-6


def test_gray_round_trip_all_levels():
    grays = np.repeat(np.arange(256)[:, None], 3, axis=1)[None]
    np.testing.assert_array_equal(lab_to_rgb(rgb_to_lab(grays)), grays)
    assert np.abs(lab_to_rgb_float(rgb_to_lab(grays)) - grays).max() < 1e-6


def test_random_color_round_trip():
    rgb = np.random.default_rng(0).integers(0, 256, size=(1000, 1, 3))
    assert np.abs(lab_to_rgb_float(rgb_to_lab(rgb)) - rgb).max() < 1e-6


def test_lab_white_to_rgb():
    np.testing.assert_array_equal(lab_to_rgb(np.array([[[100.0, 0.0, 0.0]]])), [[[255, 255, 255]]])


def test_out_of_gamut_is_clamped():
    out = lab_to_rgb(np.array([[[50.0, 200.0, 0.0], [100.0, -200.0, 300.0]]]))
    assert out.dtype == np.uint8


# -- k-means -----------------------------------------------------------------

def test_k_points_k_clusters():
    pts = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0], [10.0, -10.0]])
    pal = fit_palette(pts, K=4, seed=3)
    np.testing.assert_allclose(np.sort(pal.centroids, axis=0), np.sort(pts, axis=0))
    assert pal.fit_metadata["objective"] == 0.0


def test_two_blobs_recover_means():
    rng = np.random.default_rng(1)
    a = rng.normal([-50, -50], 1.0, size=(200, 2))
    b = rng.normal([40, 60], 1.0, size=(300, 2))
    pal = fit_palette(np.vstack([a, b]), K=2, seed=0)
    cents = pal.centroids[np.argsort(pal.centroids[:, 0])]
    np.testing.assert_allclose(cents[0], a.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(cents[1], b.mean(axis=0), atol=1e-9)


def _oracle_lloyd(points, init, max_iters):
    """Plain-Python Lloyd: nested loops, same empty-cluster rule."""
    pts = [tuple(p) for p in points]
    cents = [list(c) for c in init]

    def assign():
        out = []
        for p in pts:
            best, bd = 0, None
            for k, c in enumerate(cents):
                d = (p[0] - c[0]) ** 2 + (p[1] - c[1]) ** 2
                if bd is None or d < bd:
                    best, bd = k, d
            out.append(best)
        return out

    def obj(lab):
        return sum((p[0] - cents[k][0]) ** 2 + (p[1] - cents[k][1]) ** 2 for p, k in zip(pts, lab))

    labels = assign()
    history = [obj(labels)]
    for _ in range(max_iters):
        for k in range(len(cents)):
            members = [p for p, lab in zip(pts, labels) if lab == k]
            if members:
                cents[k] = [sum(m[0] for m in members) / len(members), sum(m[1] for m in members) / len(members)]
        new = assign()
        history.append(obj(new))
        if new == labels:
            break
        labels = new
    return history


def test_lloyd_matches_python_oracle_from_same_seeding():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(30, 2)) * 10
    pal = fit_palette(pts, K=3, seed=11, max_iters=50)
    init = kmeans_pp_init(pts, 3, np.random.default_rng(11))
    oracle = _oracle_lloyd(pts, init, 50)
    assert pal.fit_metadata["objective"] <= oracle[-1] + 1e-9
    assert pal.fit_metadata["objective"] == pytest.approx(oracle[-1], abs=1e-9)
    # sanity bound: no worse than the worst of 50 random-start runs
    restarts = [_oracle_lloyd(pts, pts[np.random.default_rng(s).choice(30, 3, replace=False)], 50)[-1]
                for s in range(50)]
    assert pal.fit_metadata["objective"] <= max(restarts) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(8, 60))
def test_objective_monotone(seed, K, n):
    pts = np.random.default_rng(seed).normal(size=(n, 2)) * 20
    pal = fit_palette(pts, K=K, seed=seed)
    h = np.array(pal.fit_metadata["history"])
    assert np.all(np.diff(h) <= 1e-9 * max(1.0, h[0]))


def test_empty_cluster_is_reseeded():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.0, 0.2]])
    # a centroid far from everything starts empty
    init = np.array([[0.0, 0.0], [10.0, 0.0], [1000.0, 1000.0]])
    cents, labels, history = lloyd(pts, init, 10)
    assert len(np.unique(labels)) == 3
    assert np.all(np.diff(history) <= 1e-12)


def test_fit_palette_too_few_points():
    with pytest.raises(ValidationError):
        fit_palette(np.zeros((3, 2)), K=4)


def test_fit_palette_deterministic():
    pts = np.random.default_rng(4).normal(size=(500, 2))
    a, b = fit_palette(pts, 16, seed=9), fit_palette(pts, 16, seed=9)
    np.testing.assert_array_equal(a.centroids, b.centroids)


# -- quantize / decode -------------------------------------------------------

@pytest.fixture
def palette():
    rng = np.random.default_rng(5)
    return Palette(rng.normal(size=(16, 2)) * 30)


def test_quantize_at_centroid(palette):
    img = np.broadcast_to(palette.centroids[7], (4, 5, 2))
    assert np.all(quantize(img, palette).indices == 7)


def test_quantize_tie_goes_to_lowest_index():
    cents = np.array([[0.0, 0.0], [1.0, 1.0], [-4.0, 20.0], [3.0, 3.0], [9.0, 9.0],
                      [7.0, -7.0], [5.0, 5.0], [6.0, 6.0], [8.0, 8.0], [4.0, 20.0]])
    pal = Palette(cents)
    mid = (cents[2] + cents[9]) / 2
    assert quantize(mid[None, None], pal).indices[0, 0] == 2


def test_quantize_matches_exhaustive_scan(palette):
    img = np.random.default_rng(6).normal(size=(6, 7, 2)) * 40
    got = quantize(img, palette).indices
    for r in range(6):
        for c in range(7):
            d = [float(((img[r, c] - cen) ** 2).sum()) for cen in palette.centroids]
            assert got[r, c] == d.index(min(d))


def test_decode_one_hot_and_uniform(palette):
    onehot = np.eye(16)[[3]]
    np.testing.assert_allclose(decode(onehot, palette)[0], palette.centroids[3])
    np.testing.assert_allclose(decode(np.full((1, 16), 1 / 16), palette)[0], palette.centroids.mean(axis=0))


def test_decode_quantize_is_nearest_centroid(palette):
    img = np.random.default_rng(7).normal(size=(5, 5, 2)) * 40
    dec = decode(quantize(img, palette), palette)
    for r in range(5):
        for c in range(5):
            d = ((palette.centroids - img[r, c]) ** 2).sum(axis=1)
            np.testing.assert_array_equal(dec[r, c], palette.centroids[int(np.argmin(d))])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_quantize_decode_idempotent(seed):
    rng = np.random.default_rng(seed)
    pal = Palette(rng.normal(size=(16, 2)) * 30)
    img = rng.normal(size=(4, 4, 2)) * 50
    q = quantize(img, pal).indices
    np.testing.assert_array_equal(quantize(decode(q, pal), pal).indices, q)


def test_decode_rejects_unnormalized(palette):
    with pytest.raises(ValidationError):
        decode(np.full((1, 16), 0.5), palette)


# -- pooling -----------------------------------------------------------------

def test_downsample_constant():
    np.testing.assert_allclose(downsample_ab(np.full((8, 8, 2), 3.5), (2, 4)), 3.5)


def test_downsample_mean_of_block():
    img = np.array([[0.0, 0.0], [10.0, 10.0]])[..., None].repeat(2, axis=2)
    np.testing.assert_allclose(downsample_ab(img, (1, 1)), [[[5.0, 5.0]]])


def test_downsample_matches_loop():
    img = np.random.default_rng(8).normal(size=(8, 8, 2))
    got = downsample_ab(img, (4, 4))
    for r in range(4):
        for c in range(4):
            block = img[2 * r:2 * r + 2, 2 * c:2 * c + 2]
            np.testing.assert_allclose(got[r, c], block.reshape(-1, 2).mean(axis=0), atol=1e-12)


def test_downsample_non_divisible():
    with pytest.raises(ValidationError):
        downsample_ab(np.zeros((9, 8, 2)), (4, 4))
