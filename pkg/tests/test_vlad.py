import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pcan import autodiff as ad
from pcan import vlad as vl


def random_params(seed, k=3, d=4, out=6):
    return vl.init_vlad(np.random.default_rng(seed), vl.VladConfig(k, out), d, np.float64)


# -- soft assignment -------------------------------------------------------------

def test_single_cluster_assigns_everything():
    p = random_params(0, k=1)
    a = vl.soft_assign(p, np.random.default_rng(1).normal(size=(7, 4))).data
    np.testing.assert_array_equal(a, np.ones((7, 1)))


def test_zero_weights_give_uniform_assignment():
    p = random_params(0, k=4)
    p["vlad.assign.W"][:] = 0
    a = vl.soft_assign(p, np.ones((3, 4))).data
    np.testing.assert_array_equal(a, np.full((3, 4), 0.25))


def test_soft_assign_matches_softmax_oracle():
    rng = np.random.default_rng(2)
    p = random_params(2, k=2, d=3)
    p["vlad.assign.b"] = rng.normal(size=2)
    f = rng.normal(size=(3, 3))
    got = vl.soft_assign(p, f).data
    for l in range(3):
        z = [sum(f[l, j] * p["vlad.assign.W"][j, k] for j in range(3)) + p["vlad.assign.b"][k] for k in range(2)]
        np.testing.assert_allclose(got[l], oracles.softmax_row(z), rtol=1e-14, atol=1e-15)


def test_soft_assign_dimension_mismatch():
    with pytest.raises(ad.DimensionError):
        vl.soft_assign(random_params(0, d=4), np.ones((3, 5)))


# -- aggregation -----------------------------------------------------------------

def test_unit_attention_reduces_to_plain_vlad_bit_exactly():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        p = random_params(seed)
        f = rng.normal(size=(int(rng.integers(1, 40)), 4))
        plain = vl.plain_vlad(p, f).data
        ones = vl.attention_vlad(p, f, np.ones(len(f))).data
        assert np.array_equal(plain, ones)


def test_sum_of_features_example():
    p = random_params(0, k=1, d=2)
    p["vlad.clusters"][:] = 0
    v = vl.attention_vlad(p, np.array([[1.0, 0.0], [0.0, 1.0]]), np.ones(2)).data
    np.testing.assert_array_equal(v, [[1.0, 1.0]])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_attention_vlad_matches_triple_loop(seed):
    rng = np.random.default_rng(seed)
    p = random_params(seed)
    f = rng.normal(size=(int(rng.integers(1, 20)), 4))
    s = rng.uniform(0, 1, len(f))
    a = vl.soft_assign(p, f).data
    want = oracles.vlad(f.tolist(), a.tolist(), p["vlad.clusters"].tolist(), s.tolist())
    np.testing.assert_allclose(vl.attention_vlad(p, f, s).data, want, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.01, 10))
def test_linear_in_attention(seed, lam):
    rng = np.random.default_rng(seed)
    p = random_params(seed)
    f, s = rng.normal(size=(12, 4)), rng.uniform(0, 1, 12)
    np.testing.assert_allclose(
        vl.attention_vlad(p, f, lam * s).data, lam * vl.attention_vlad(p, f, s).data, rtol=1e-10, atol=1e-10
    )


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_joint_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p = random_params(seed)
    f, s = rng.normal(size=(15, 4)), rng.uniform(0, 1, 15)
    perm = rng.permutation(15)
    np.testing.assert_allclose(
        vl.attention_vlad(p, f[perm], s[perm]).data, vl.attention_vlad(p, f, s).data, rtol=1e-12, atol=1e-12
    )


def test_attention_length_mismatch():
    with pytest.raises(ad.DimensionError):
        vl.attention_vlad(random_params(0), np.ones((5, 4)), np.ones(4))


# -- compaction ------------------------------------------------------------------

def test_intra_normalisation_3_4_5():
    v = np.zeros((2, 3))
    v[1] = [3.0, 4.0, 0.0]
    np.testing.assert_array_equal(ad.l2_normalize(v, axis=-1, zero_ok=True).data, [[0, 0, 0], [0.6, 0.8, 0]])


def test_compact_identity_projection_by_hand():
    p = random_params(0, k=2, d=2, out=4)
    p["vlad.proj.W"] = np.eye(4)
    p["vlad.proj.b"] = np.zeros(4)
    out = vl.compact(p, np.array([[3.0, 4.0], [0.0, 2.0]])).data
    # rows become (0.6, 0.8) and (0, 1); the flattened vector has norm sqrt(2)
    np.testing.assert_allclose(out, np.array([0.6, 0.8, 0.0, 1.0]) / np.sqrt(2), rtol=1e-15)


def test_compact_all_zero_is_degenerate():
    p = random_params(0, k=2, d=2, out=4)
    with pytest.raises(vl.DegenerateDescriptorError):
        vl.compact(p, np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_compact_output_is_unit_norm(seed):
    rng = np.random.default_rng(seed)
    p = random_params(seed, out=256)
    d = vl.compact(p, rng.normal(size=(3, 4))).data
    assert d.shape == (256,) and abs(np.linalg.norm(d) - 1) < 1e-12
