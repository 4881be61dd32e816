"""Contextual attention head: multi-scale grouping to a per-point score.

Pipeline for a cloud of ``N`` points with local features ``[N, D]``:

1. one farthest-point-sampled centroid set shared by every grouping scale;
2. up to three ball-query groupings (SAG1-3) around those centroids;
3. their pooled features are concatenated;
4. a global grouping (SAG4, one centroid, infinite radius) accumulates them;
5. FP1 propagates back to the centroids, FP2 back to all ``N`` points;
6. a small FC stack and a sigmoid give one score in ``(0, 1)`` per point.

Everything that depends only on coordinates (sample indices, neighbour
lists, interpolation weights) lives in :class:`AttentionGeometry`, which can
be computed once per cloud and reused across training steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .pointops import (
    GroupIndex,
    SagConfig,
    ball_query,
    farthest_point_sample,
    fp_layer,
    init_mlp,
    relative_coords,
    sag_layer,
    shared_mlp,
    three_nn_weights,
)

DEFAULT_SCALES = (
    SagConfig(256, 0.1, 16, (16, 16, 32)),
    SagConfig(256, 0.2, 32, (32, 32, 64)),
    SagConfig(256, 0.4, 64, (32, 64, 64)),
)
DEFAULT_ACCUMULATE = SagConfig(1, math.inf, 256, (256, 512))


@dataclass(frozen=True)
class AttentionConfig:
    msg_scales: int = 3
    scales: tuple[SagConfig, ...] = DEFAULT_SCALES
    accumulate: SagConfig = DEFAULT_ACCUMULATE
    fp1_widths: tuple[int, ...] = (256, 128)
    fp2_widths: tuple[int, ...] = (128, 128)
    fc_widths: tuple[int, ...] = (1, 1)
    interp_k: int = 3
    interp_power: float = 2.0

    def __post_init__(self):
        if not 1 <= self.msg_scales <= len(self.scales):
            raise ValueError(f"msg_scales must be in 1..{len(self.scales)}")
        n = {s.n_centroids for s in self.scales[: self.msg_scales]}
        if len(n) != 1:
            raise ValueError("all grouping scales must share one sampling number")
        if self.accumulate.k < self.n_centroids:
            raise ValueError("accumulation layer must see every centroid")
        if not self.fc_widths or self.fc_widths[-1] != 1:
            raise ValueError("final FC stack must end in width 1")
        for name in ("fp1_widths", "fp2_widths", "fc_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))

    @property
    def active_scales(self) -> tuple[SagConfig, ...]:
        return self.scales[: self.msg_scales]

    @property
    def n_centroids(self) -> int:
        return self.scales[0].n_centroids

    @property
    def msg_width(self) -> int:
        return sum(s.mlp_widths[-1] for s in self.active_scales)

    def scaled(self, n_centroids: int, width_divisor: int = 1) -> "AttentionConfig":
        """Same layout with fewer centroids and narrower layers."""

        def shrink(ws):
            return tuple(max(1, w // width_divisor) for w in ws)

        scales = tuple(
            replace(s, n_centroids=n_centroids, mlp_widths=shrink(s.mlp_widths)) for s in self.scales
        )
        acc = replace(self.accumulate, k=n_centroids, mlp_widths=shrink(self.accumulate.mlp_widths))
        fc = self.fc_widths if self.fc_widths == (1, 1) else shrink(self.fc_widths[:-1]) + (1,)
        return replace(
            self,
            scales=scales,
            accumulate=acc,
            fp1_widths=shrink(self.fp1_widths),
            fp2_widths=shrink(self.fp2_widths),
            fc_widths=fc,
        )


@dataclass
class AttentionGeometry:
    """Coordinate-only quantities for one cloud or a stacked batch."""

    centroids: np.ndarray
    groups: list[GroupIndex]
    rel: list[np.ndarray]
    acc_group: GroupIndex
    acc_rel: np.ndarray
    fp1: tuple[np.ndarray, np.ndarray]
    fp2: tuple[np.ndarray, np.ndarray]
    extra: dict = field(default_factory=dict)


def prepare_geometry(coords, cfg: AttentionConfig) -> AttentionGeometry:
    """Sampling, grouping and interpolation indices for a single ``[N, 3]`` cloud."""
    coords = np.asarray(coords, dtype=np.float64)
    n = len(coords)
    if cfg.n_centroids > n:
        raise ValueError(f"{cfg.n_centroids} centroids requested from a {n}-point cloud")
    cent = farthest_point_sample(coords, cfg.n_centroids)
    groups = [ball_query(coords, cent, s.radius, s.k) for s in cfg.active_scales]
    rel = [relative_coords(coords, g) for g in groups]
    sub = coords[cent]
    acc_cent = farthest_point_sample(sub, cfg.accumulate.n_centroids)
    acc_group = ball_query(sub, acc_cent, cfg.accumulate.radius, cfg.accumulate.k)
    acc_rel = relative_coords(sub, acc_group)
    fp1 = three_nn_weights(sub, sub[acc_cent], cfg.interp_k, cfg.interp_power)
    fp2 = three_nn_weights(coords, sub, cfg.interp_k, cfg.interp_power)
    return AttentionGeometry(cent, groups, rel, acc_group, acc_rel, fp1, fp2)


def stack_geometry(items: list[AttentionGeometry]) -> AttentionGeometry:
    """Stack per-cloud geometry along a new leading batch axis."""

    def st(xs):
        return np.stack(xs)

    def st_group(gs):
        return GroupIndex(st([g.centroids for g in gs]), st([g.neighbors for g in gs]))

    n_scales = len(items[0].groups)
    return AttentionGeometry(
        centroids=st([g.centroids for g in items]),
        groups=[st_group([g.groups[i] for g in items]) for i in range(n_scales)],
        rel=[st([g.rel[i] for g in items]) for i in range(n_scales)],
        acc_group=st_group([g.acc_group for g in items]),
        acc_rel=st([g.acc_rel for g in items]),
        fp1=(st([g.fp1[0] for g in items]), st([g.fp1[1] for g in items])),
        fp2=(st([g.fp2[0] for g in items]), st([g.fp2[1] for g in items])),
    )


def batch_geometry(coords, cfg: AttentionConfig) -> AttentionGeometry:
    coords = np.asarray(coords)
    if coords.ndim == 2:
        return stack_geometry([prepare_geometry(coords, cfg)])
    return stack_geometry([prepare_geometry(c, cfg) for c in coords])


def init_attention(rng, cfg: AttentionConfig, feat_dim: int, dtype=np.float32) -> dict:
    params = {}
    for i, s in enumerate(cfg.active_scales):
        params.update(init_mlp(rng, f"attention.sag{i + 1}", 3 + feat_dim, s.mlp_widths, dtype))
    acc = cfg.accumulate
    params.update(init_mlp(rng, "attention.sag4", 3 + cfg.msg_width, acc.mlp_widths, dtype))
    params.update(
        init_mlp(rng, "attention.fp1", acc.mlp_widths[-1] + cfg.msg_width, cfg.fp1_widths, dtype)
    )
    params.update(init_mlp(rng, "attention.fp2", cfg.fp1_widths[-1] + feat_dim, cfg.fp2_widths, dtype))
    params.update(init_mlp(rng, "attention.fc", cfg.fp2_widths[-1], cfg.fc_widths, dtype))
    return params


def compute_attention(params, coords, local_feats, cfg: AttentionConfig, geom=None, trace=None):
    """Per-point attention scores ``[B, N, 1]`` for batched ``coords [B, N, 3]``.

    ``trace``, when a dict, receives the intermediate tensors keyed
    ``sag1``..``sag3``, ``msg``, ``sag4``, ``fp1``, ``fp2``, ``attention``.
    """
    coords = np.asarray(coords)
    if coords.ndim == 2:
        raise ad.DimensionError("compute_attention expects a batch axis; use coords[None]")
    if geom is None:
        geom = batch_geometry(coords, cfg)
    dtype = local_feats.dtype
    trace = {} if trace is None else trace

    scale_feats = []
    for i, s in enumerate(cfg.active_scales):
        _, f = sag_layer(
            params, coords, local_feats, s,
            prefix=f"attention.sag{i + 1}",
            group_index=geom.groups[i],
            rel=geom.rel[i].astype(dtype),
        )
        trace[f"sag{i + 1}"] = f
        scale_feats.append(f)
    msg = ad.concat(scale_feats, axis=-1) if len(scale_feats) > 1 else scale_feats[0]
    trace["msg"] = msg

    sub = np.take_along_axis(coords, geom.centroids[..., None], axis=-2)
    acc_coords, acc = sag_layer(
        params, sub, msg, cfg.accumulate,
        prefix="attention.sag4",
        group_index=geom.acc_group,
        rel=geom.acc_rel.astype(dtype),
    )
    trace["sag4"] = acc

    f1 = fp_layer(params, sub, acc_coords, acc, msg, cfg.fp1_widths, prefix="attention.fp1", interp=geom.fp1)
    trace["fp1"] = f1
    f2 = fp_layer(
        params, coords, sub, f1, local_feats, cfg.fp2_widths, prefix="attention.fp2", interp=geom.fp2
    )
    trace["fp2"] = f2
    logits = shared_mlp(params, "attention.fc", f2, len(cfg.fc_widths), final_relu=False)
    attn = ad.sigmoid(logits)
    trace["attention"] = attn
    return attn


def reweight_features(feats, attn):
    """Scale row ``l`` of ``feats`` by ``attn[l]`` (attention of shape ``[..., N]`` or ``[..., N, 1]``)."""
    f, s = ad._data(feats), ad._data(attn)
    if s.ndim == f.ndim - 1:
        attn = ad.reshape(attn, s.shape + (1,)) if isinstance(attn, ad.Tensor) else s[..., None]
        s = ad._data(attn)
    if s.shape[:-1] != f.shape[:-1] or s.shape[-1] != 1:
        raise ad.DimensionError(f"attention {s.shape} does not match features {f.shape}")
    return ad.mul(feats, attn)
