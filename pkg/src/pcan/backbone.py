"""PointNet local feature extractor.

Five shared fully connected layers map every point independently to a
``D``-dim feature. Two optional transformation nets predict a ``C x C``
matrix from the whole cloud (input coordinates, then the features after the
third layer). Each T-net outputs ``identity + residual`` with the residual
layer zero-initialised, so a fresh T-net leaves its input untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .pointops import init_mlp, shared_mlp


@dataclass(frozen=True)
class BackboneConfig:
    mlp_widths: tuple[int, ...] = (64, 64, 64, 128, 64)
    use_input_tnet: bool = False
    use_feature_tnet: bool = False
    tnet_point_widths: tuple[int, ...] = (64, 128)
    tnet_fc_widths: tuple[int, ...] = (64,)

    def __post_init__(self):
        widths = tuple(int(w) for w in self.mlp_widths)
        if len(widths) != 5 or min(widths) < 1:
            raise ValueError(f"backbone needs 5 positive widths, got {widths}")
        object.__setattr__(self, "mlp_widths", widths)
        object.__setattr__(self, "tnet_point_widths", tuple(self.tnet_point_widths))
        object.__setattr__(self, "tnet_fc_widths", tuple(self.tnet_fc_widths))

    @property
    def out_dim(self) -> int:
        return self.mlp_widths[-1]


def init_tnet(rng, prefix, c, cfg: BackboneConfig, dtype=np.float32) -> dict:
    params = init_mlp(rng, f"{prefix}.point", c, cfg.tnet_point_widths, dtype)
    params.update(init_mlp(rng, f"{prefix}.fc", cfg.tnet_point_widths[-1], cfg.tnet_fc_widths, dtype))
    params[f"{prefix}.residual.W"] = np.zeros((cfg.tnet_fc_widths[-1], c * c), dtype=dtype)
    params[f"{prefix}.residual.b"] = np.zeros(c * c, dtype=dtype)
    return params


def init_backbone(rng, cfg: BackboneConfig, dtype=np.float32) -> dict:
    w = cfg.mlp_widths
    params = {}
    params.update(init_mlp(rng, "backbone.fc", 3, w, dtype))
    if cfg.use_input_tnet:
        params.update(init_tnet(rng, "backbone.tnet_in", 3, cfg, dtype))
    if cfg.use_feature_tnet:
        params.update(init_tnet(rng, "backbone.tnet_feat", w[2], cfg, dtype))
    return params


def tnet(params, prefix: str, x, cfg: BackboneConfig) -> ad.Tensor:
    """Predict the ``[..., C, C]`` transform for ``x`` of shape ``[..., N, C]``."""
    c = x.shape[-1]
    w = params[f"{prefix}.residual.W"]
    if ad._data(w).shape[1] != c * c:
        raise ad.DimensionError(f"{prefix}: residual width {ad._data(w).shape[1]} != {c}x{c}")
    h = shared_mlp(params, f"{prefix}.point", x, len(cfg.tnet_point_widths))
    h = ad.set_max_pool(h)
    h = shared_mlp(params, f"{prefix}.fc", h, len(cfg.tnet_fc_widths))
    r = ad.apply_linear(h, w, params[f"{prefix}.residual.b"])
    r = ad.reshape(r, r.shape[:-1] + (c, c))
    return ad.add(r, np.eye(c, dtype=r.dtype))


def extract_local_features(params, coords, cfg: BackboneConfig, dtype=np.float32) -> ad.Tensor:
    """``[..., N, 3]`` coordinates -> ``[..., N, D]`` per-point features."""
    x = ad.Tensor(np.asarray(coords, dtype=dtype))
    if x.shape[-1] != 3:
        raise ad.DimensionError(f"expected xyz coordinates, got shape {x.shape}")
    if cfg.use_input_tnet:
        x = ad.matmul(x, tnet(params, "backbone.tnet_in", x, cfg))
    for i in range(5):
        if i == 3 and cfg.use_feature_tnet:
            x = ad.matmul(x, tnet(params, "backbone.tnet_feat", x, cfg))
        x = ad.apply_linear(x, params[f"backbone.fc.{i}.W"], params[f"backbone.fc.{i}.b"])
        if i < 4:
            x = ad.relu(x)
    return x
