"""End-to-end descriptor network: backbone -> attention -> weighted VLAD -> 256-d."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionConfig,
    AttentionGeometry,
    batch_geometry,
    compute_attention,
    init_attention,
    stack_geometry,
)
from .backbone import BackboneConfig, extract_local_features, init_backbone
from .vlad import VladConfig, attention_vlad, compact, init_vlad

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    vlad: VladConfig = field(default_factory=VladConfig)
    # "learned" runs the attention head; "ones" forces s = 1 (plain NetVLAD)
    attention_mode: str = "learned"
    precision: str = "float32"

    def __post_init__(self):
        if self.attention_mode not in ("learned", "ones"):
            raise ValueError(f"unknown attention_mode {self.attention_mode!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh parameters; the attention head is initialised in both modes so a
    baseline and a full model with the same seed start from identical weights."""
    rng = np.random.default_rng(seed)
    d = cfg.backbone.out_dim
    params = {}
    params.update(init_backbone(rng, cfg.backbone, cfg.dtype))
    params.update(init_attention(rng, cfg.attention, d, cfg.dtype))
    params.update(init_vlad(rng, cfg.vlad, d, cfg.dtype))
    return params


def forward(params, coords, cfg: ModelConfig, geom: AttentionGeometry | None = None, trace=None):
    """Descriptors ``[B, 256]`` and attention ``[B, N, 1]`` for ``coords [B, N, 3]``."""
    coords = np.asarray(coords)
    if coords.ndim == 2:
        raise ad.DimensionError("forward expects a batch axis; use coords[None]")
    trace = {} if trace is None else trace
    feats = extract_local_features(params, coords, cfg.backbone, cfg.dtype)
    trace["local"] = feats
    if cfg.attention_mode == "learned":
        attn = compute_attention(params, coords, feats, cfg.attention, geom=geom, trace=trace)
    else:
        attn = ad.Tensor(np.ones(coords.shape[:-1] + (1,), dtype=cfg.dtype))
    v = attention_vlad(params, feats, attn)
    trace["vlad"] = v
    desc = compact(params, v)
    trace["descriptor"] = desc
    return desc, attn


def describe(params, coords, cfg: ModelConfig, geom: list | None = None, batch_size: int = 32):
    """Inference without a tape: numpy descriptors ``[B, 256]`` and attention ``[B, N]``.

    ``geom`` optionally holds one precomputed :class:`AttentionGeometry` per cloud.
    """
    coords = np.asarray(coords)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
    descs, attns = [], []
    for start in range(0, len(coords), batch_size):
        chunk = coords[start : start + batch_size]
        g = None
        if cfg.attention_mode == "learned":
            if geom is None:
                g = batch_geometry(chunk, cfg.attention)
            else:
                g = stack_geometry(geom[start : start + batch_size])
        d, a = forward(params, chunk, cfg, geom=g)
        descs.append(d.data)
        attns.append(a.data[..., 0])
    desc, attn = np.concatenate(descs), np.concatenate(attns)
    return (desc[0], attn[0]) if single else (desc, attn)
