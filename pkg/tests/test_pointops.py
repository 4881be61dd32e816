import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pcan import autodiff as ad
from pcan import pointops as po


def random_cloud(seed, n=None, quantize=False):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 65))
    pts = rng.uniform(-1, 1, size=(n, 3))
    if quantize:
        # coarse grid: forces exact distance ties and duplicate points
        pts = np.round(pts * 2) / 2
    return pts


# -- farthest point sampling ---------------------------------------------------

def test_fps_worked_example():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [9, 0, 0]], dtype=float)
    assert po.farthest_point_sample(pts, 3).tolist() == [3, 0, 2]


def test_fps_all_points_is_permutation():
    pts = random_cloud(1, 40)
    assert sorted(po.farthest_point_sample(pts, 40).tolist()) == list(range(40))


def test_fps_rejects_bad_counts():
    with pytest.raises(ValueError):
        po.farthest_point_sample(np.zeros((4, 3)), 5)
    with pytest.raises(ValueError):
        po.farthest_point_sample(np.zeros((4, 3)), 0)


def test_fps_256_of_4096():
    pts = random_cloud(2, 4096)
    idx = po.farthest_point_sample(pts, 256)
    assert idx.shape == (256,) and len(set(idx.tolist())) == 256


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), quantize=st.booleans())
def test_fps_matches_oracle(seed, quantize):
    pts = random_cloud(seed, quantize=quantize)
    n = int(np.random.default_rng(seed).integers(1, len(pts) + 1))
    assert po.farthest_point_sample(pts, n).tolist() == oracles.fps(pts, n)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_fps_min_distance_non_increasing(seed):
    pts = random_cloud(seed, 48)
    sel = po.farthest_point_sample(pts, 48)
    d = po.fps_min_distances(pts, sel)
    assert np.all(np.diff(d) <= 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), quantize=st.booleans())
def test_fps_permutation_selects_same_points(seed, quantize):
    pts = random_cloud(seed, quantize=quantize)
    perm = np.random.default_rng(seed + 1).permutation(len(pts))
    n = max(1, len(pts) // 2)
    a = pts[po.farthest_point_sample(pts, n)]
    b = pts[perm][po.farthest_point_sample(pts[perm], n)]
    np.testing.assert_array_equal(a, b)


# -- ball query ----------------------------------------------------------------

def test_ball_query_worked_example():
    pts = np.array([[0, 0, 0], [0.05, 0, 0], [0.5, 0, 0]])
    assert po.ball_query(pts, [0], 0.1, 2).neighbors.tolist() == [[0, 1]]
    assert po.ball_query(pts, [0], 0.1, 3).neighbors.tolist() == [[0, 1, 0]]


def test_ball_query_infinite_radius_takes_everything():
    pts = random_cloud(3, 20)
    gi = po.ball_query(pts, [4, 7], math.inf, 20)
    assert gi.neighbors.tolist() == [list(range(20))] * 2


def test_ball_query_rejects_bad_k():
    with pytest.raises(ValueError):
        po.ball_query(np.zeros((3, 3)), [0], 0.1, 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), quantize=st.booleans(), r=st.sampled_from([0.1, 0.2, 0.4, 1.0]))
def test_ball_query_matches_oracle(seed, quantize, r):
    pts = random_cloud(seed, quantize=quantize)
    rng = np.random.default_rng(seed)
    cent = rng.choice(len(pts), size=min(8, len(pts)), replace=False)
    k = int(rng.integers(1, 17))
    gi = po.ball_query(pts, cent, r, k)
    assert gi.neighbors.tolist() == oracles.ball_query(pts, cent.tolist(), r, k)
    d = np.linalg.norm(pts[gi.neighbors] - pts[cent][:, None], axis=-1)
    assert np.all(d <= r + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ball_query_groups_survive_permutation(seed):
    pts = random_cloud(seed, 64, quantize=True)
    perm = np.random.default_rng(seed).permutation(64)
    inv = np.argsort(perm)
    cent = po.farthest_point_sample(pts, 8)
    a = po.ball_query(pts, cent, 0.6, 6)
    b = po.ball_query(pts[perm], inv[cent], 0.6, 6)
    for ra, rb in zip(a.neighbors, b.neighbors):
        # padding repeats the lowest-index member, so compare sets, not multisets
        assert set(map(tuple, pts[ra])) == set(map(tuple, pts[perm][rb]))


# -- grouping ------------------------------------------------------------------

def test_group_points_hand_example():
    pts = np.array([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]])
    feats = np.array([[0.0], [5.0], [7.0]])
    gi = po.GroupIndex(np.array([0]), np.array([[1, 2]]))
    np.testing.assert_allclose(po.group_points(pts, feats, gi).data, [[[0.1, 0, 0, 5], [0, 0.1, 0, 7]]])


def test_group_points_centroid_is_origin():
    pts = random_cloud(4, 10)
    gi = po.GroupIndex(np.array([3]), np.array([[3, 3]]))
    np.testing.assert_array_equal(po.group_points(pts, None, gi).data, np.zeros((1, 2, 3)))


def test_group_points_index_out_of_range():
    with pytest.raises(IndexError):
        po.group_points(np.zeros((4, 3)), np.zeros((4, 2)), po.GroupIndex(np.array([0]), np.array([[0, 9]])))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_group_points_matches_oracle(seed):
    pts = random_cloud(seed)
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(len(pts), 3))
    cent = po.farthest_point_sample(pts, min(4, len(pts)))
    gi = po.ball_query(pts, cent, 0.5, 5)
    got = po.group_points(pts, feats, gi).data
    assert got.tolist() == oracles.group(pts, feats, cent.tolist(), gi.neighbors.tolist())


# -- interpolation -------------------------------------------------------------

def test_single_coarse_point_copies_feature():
    idx, w = po.three_nn_weights(random_cloud(5, 7), np.array([[0.2, 0.2, 0.2]]))
    out = po.interpolate(np.array([[4.0, -1.0]]), idx, w).data
    np.testing.assert_array_equal(out, np.tile([4.0, -1.0], (7, 1)))


def test_equidistant_interpolates_midpoint():
    coarse = np.array([[-1.0, 0, 0], [1.0, 0, 0]])
    idx, w = po.three_nn_weights(np.array([[0.0, 0, 0]]), coarse)
    assert po.interpolate(np.array([[0.0], [2.0]]), idx, w).data[0, 0] == 1.0


def test_coincident_point_copies_exactly():
    coarse = np.array([[0.3, 0.1, 0.2], [0.9, 0.9, 0.9], [-0.5, 0.0, 0.1]])
    idx, w = po.three_nn_weights(coarse[[0]], coarse)
    assert w[0].tolist() == [1.0, 0.0, 0.0] and idx[0, 0] == 0


def test_empty_coarse_set_rejected():
    with pytest.raises(ValueError):
        po.three_nn_weights(np.zeros((2, 3)), np.zeros((0, 3)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), quantize=st.booleans())
def test_three_nn_matches_oracle(seed, quantize):
    fine = random_cloud(seed, quantize=quantize)
    coarse = random_cloud(seed + 7, int(np.random.default_rng(seed).integers(1, 20)), quantize=quantize)
    idx, w = po.three_nn_weights(fine, coarse)
    oi, ow = oracles.three_nn(fine, coarse)
    assert idx.tolist() == oi and w.tolist() == ow
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


# -- composite layers ------------------------------------------------------------

def test_sag_layer_matches_composed_oracle():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-1, 1, size=(8, 3))
    feats = rng.normal(size=(8, 2))
    cfg = po.SagConfig(4, 0.9, 3, (5, 6))
    params = po.init_mlp(rng, "s", 5, cfg.mlp_widths, np.float64)
    cent_xyz, out = po.sag_layer(params, pts, feats, cfg, prefix="s")

    cent = oracles.fps(pts, 4)
    groups = np.array(oracles.group(pts, feats, cent, oracles.ball_query(pts, cent, 0.9, 3)))
    h = np.maximum(groups @ params["s.0.W"] + params["s.0.b"], 0)
    h = np.maximum(h @ params["s.1.W"] + params["s.1.b"], 0)
    np.testing.assert_allclose(out.data, h.max(axis=1), rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(cent_xyz, pts[cent])


def test_sag_layer_first_scale_shape():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1, 1, size=(1, 4096, 3))
    feats = rng.normal(size=(1, 4096, 8)).astype(np.float32)
    cfg = po.SagConfig(256, 0.1, 16, (16, 16, 32))
    params = po.init_mlp(rng, "s", 3 + 8, cfg.mlp_widths)
    _, out = po.sag_layer(params, pts, feats, cfg, prefix="s")
    assert out.shape == (1, 256, 32)


def test_sag_layer_degenerate_all_points():
    rng = np.random.default_rng(8)
    pts = rng.uniform(-1, 1, size=(6, 3))
    cfg = po.SagConfig(6, math.inf, 6, (4,))
    params = po.init_mlp(rng, "s", 3, cfg.mlp_widths, np.float64)
    gi = po.ball_query(pts, po.farthest_point_sample(pts, 6), math.inf, 6)
    assert sorted(gi.centroids.tolist()) == list(range(6))
    assert gi.neighbors.tolist() == [list(range(6))] * 6
    _, out = po.sag_layer(params, pts, None, cfg, prefix="s")
    assert out.shape == (6, 4)


def test_fp_layer_widths():
    rng = np.random.default_rng(9)
    fine, coarse = rng.uniform(-1, 1, (1, 40, 3)), rng.uniform(-1, 1, (1, 10, 3))
    params = po.init_mlp(rng, "fp", 7 + 5, (256, 128))
    out = po.fp_layer(params, fine, coarse, rng.normal(size=(1, 10, 7)), rng.normal(size=(1, 40, 5)), (256, 128))
    assert out.shape == (1, 40, 128)
    with pytest.raises(ValueError):
        po.fp_layer(params, fine, np.zeros((1, 0, 3)), np.zeros((1, 0, 7)), None, (256, 128))


def test_sag_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    pts = rng.uniform(-1, 1, size=(1, 16, 3))
    cfg = po.SagConfig(4, 0.8, 4, (3, 2))
    params = po.init_mlp(rng, "s", 3 + 2, cfg.mlp_widths, np.float64)
    params["f"] = rng.normal(size=(1, 16, 2))
    proj = rng.normal(size=(1, 4, 2))

    def fn(t, p):
        return ad.sum_(po.sag_layer(p, pts, p["f"], cfg, prefix="s")[1] * proj)

    assert ad.finite_diff_check(fn, params).passed(1e-5)


def test_sag_config_validation():
    with pytest.raises(ValueError):
        po.SagConfig(0, 0.1, 4)
    with pytest.raises(ValueError):
        po.SagConfig(4, 0.0, 4)
    with pytest.raises(ValueError):
        po.SagConfig(4, 0.1, 0)
    assert po.SagConfig(1, math.inf, 256).radius == math.inf
