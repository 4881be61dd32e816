import numpy as np
import pytest

from pcan import autodiff as ad
from pcan import backbone as bb


def params_for(cfg, seed=0, dtype=np.float64):
    return bb.init_backbone(np.random.default_rng(seed), cfg, dtype)


def test_output_shape_and_width():
    cfg = bb.BackboneConfig()
    x = np.random.default_rng(0).uniform(-1, 1, (2, 100, 3))
    assert bb.extract_local_features(params_for(cfg), x, cfg).shape == (2, 100, 64)


def test_points_are_processed_independently():
    cfg = bb.BackboneConfig((8, 8, 8, 16, 8))
    p = params_for(cfg)
    x = np.random.default_rng(1).uniform(-1, 1, (1, 30, 3))
    full = bb.extract_local_features(p, x, cfg, np.float64).data
    one = bb.extract_local_features(p, x[:, 7:8], cfg, np.float64).data
    np.testing.assert_allclose(full[:, 7:8], one, rtol=1e-13, atol=1e-14)


def test_fresh_tnets_are_identity():
    plain = bb.BackboneConfig((8, 8, 8, 16, 8))
    with_t = bb.BackboneConfig((8, 8, 8, 16, 8), use_input_tnet=True, use_feature_tnet=True)
    p = params_for(with_t)
    x = np.random.default_rng(2).uniform(-1, 1, (1, 20, 3))
    a = bb.extract_local_features(p, x, plain, np.float64).data
    b = bb.extract_local_features(p, x, with_t, np.float64).data
    np.testing.assert_array_equal(a, b)


def test_tnet_makes_features_cloud_dependent():
    cfg = bb.BackboneConfig((8, 8, 8, 16, 8), use_input_tnet=True)
    p = params_for(cfg)
    p["backbone.tnet_in.residual.W"] = np.random.default_rng(3).normal(size=p["backbone.tnet_in.residual.W"].shape)
    x = np.random.default_rng(4).uniform(-1, 1, (1, 20, 3))
    other = np.concatenate([x[:, :1], x[:, 1:] * 0.5], axis=1)
    a = bb.extract_local_features(p, x, cfg, np.float64).data[0, 0]
    b = bb.extract_local_features(p, other, cfg, np.float64).data[0, 0]
    assert not np.allclose(a, b)


def test_permutation_equivariance_with_tnets():
    cfg = bb.BackboneConfig((8, 8, 8, 16, 8), use_input_tnet=True, use_feature_tnet=True)
    p = params_for(cfg)
    for k in ("backbone.tnet_in.residual.W", "backbone.tnet_feat.residual.W"):
        p[k] = np.random.default_rng(5).normal(size=p[k].shape) * 0.1
    x = np.random.default_rng(6).uniform(-1, 1, (1, 40, 3))
    perm = np.random.default_rng(7).permutation(40)
    a = bb.extract_local_features(p, x, cfg, np.float64).data
    b = bb.extract_local_features(p, x[:, perm], cfg, np.float64).data
    np.testing.assert_allclose(a[:, perm], b, rtol=1e-12, atol=1e-12)


def test_rejects_non_xyz_input():
    cfg = bb.BackboneConfig()
    with pytest.raises(ad.DimensionError):
        bb.extract_local_features(params_for(cfg), np.zeros((1, 5, 4)), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        bb.BackboneConfig((64, 64, 64))
    with pytest.raises(ValueError):
        bb.BackboneConfig((64, 64, 0, 128, 64))


def test_gradients_through_tnets():
    cfg = bb.BackboneConfig((3, 3, 3, 4, 3), True, True, (4, 5), (3,))
    p = params_for(cfg, 8)
    for k in ("backbone.tnet_in.residual.W", "backbone.tnet_feat.residual.W"):
        p[k] = np.random.default_rng(9).normal(size=p[k].shape) * 0.1
    x = np.random.default_rng(10).uniform(-1, 1, (1, 10, 3))
    proj = np.random.default_rng(11).normal(size=(1, 10, 3))

    def fn(t, q):
        return ad.sum_(bb.extract_local_features(q, x, cfg, np.float64) * proj)

    rep = ad.finite_diff_check(fn, p, max_entries=16)
    assert rep.passed(1e-5), rep.max_rel_err
