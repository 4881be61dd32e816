"""Attention-weighted NetVLAD aggregation and descriptor compaction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class DegenerateDescriptorError(ArithmeticError):
    """The projected descriptor is all zeros and cannot be normalised."""


@dataclass(frozen=True)
class VladConfig:
    n_clusters: int = 8
    output_dim: int = 256

    def __post_init__(self):
        if self.n_clusters < 1 or self.output_dim < 1:
            raise ValueError("n_clusters and output_dim must be positive")


def init_vlad(rng, cfg: VladConfig, feat_dim: int, dtype=np.float32) -> dict:
    k, d = cfg.n_clusters, feat_dim
    s = 1.0 / math.sqrt(d)
    return {
        "vlad.clusters": (rng.standard_normal((k, d)) * s).astype(dtype),
        "vlad.assign.W": (rng.standard_normal((d, k)) * s).astype(dtype),
        "vlad.assign.b": np.zeros(k, dtype=dtype),
        "vlad.proj.W": (rng.standard_normal((k * d, cfg.output_dim)) / math.sqrt(k * d)).astype(dtype),
        "vlad.proj.b": np.zeros(cfg.output_dim, dtype=dtype),
    }


def soft_assign(params, feats) -> ad.Tensor:
    """Row-wise softmax of ``feats @ W + b``: ``[..., N, K]``, rows sum to 1."""
    return ad.softmax_rows(ad.apply_linear(feats, params["vlad.assign.W"], params["vlad.assign.b"]))


def attention_vlad(params, feats, attn=None) -> ad.Tensor:
    """``V_k = sum_l s_l * a_l^k * (f_l - c_k)`` as a ``[..., K, D]`` tensor.

    With ``attn=None`` this is plain VLAD. Passing all-ones attention runs the
    identical arithmetic (``a * 1.0 == a`` exactly), so both agree bit for bit.
    """
    a = soft_assign(params, feats)
    if attn is not None:
        s = ad._data(attn)
        if s.ndim == a.ndim - 1:
            attn = ad.reshape(attn, s.shape + (1,)) if isinstance(attn, ad.Tensor) else s[..., None]
            s = ad._data(attn)
        if s.shape[:-1] != a.shape[:-1] or s.shape[-1] != 1:
            raise ad.DimensionError(f"attention {s.shape} does not match features {ad._data(feats).shape}")
        a = ad.mul(a, attn)
    c = params["vlad.clusters"]
    if ad._data(c).shape[1] != ad._data(feats).shape[-1]:
        raise ad.DimensionError("cluster dimension differs from feature dimension")
    weighted_sum = ad.matmul(ad.transpose(a), feats)
    mass = ad.sum_(a, axis=-2, keepdims=True)
    return ad.sub(weighted_sum, ad.mul(ad.transpose(mass), c))


def plain_vlad(params, feats) -> ad.Tensor:
    return attention_vlad(params, feats, None)


def compact(params, vlad) -> ad.Tensor:
    """Intra-normalise each cluster row, flatten, project, L2-normalise."""
    v = ad.l2_normalize(vlad, axis=-1, zero_ok=True)
    v = ad.reshape(v, v.shape[:-2] + (v.shape[-2] * v.shape[-1],))
    v = ad.apply_linear(v, params["vlad.proj.W"], params["vlad.proj.b"])
    try:
        return ad.l2_normalize(v, axis=-1, zero_ok=False)
    except ZeroDivisionError as exc:
        raise DegenerateDescriptorError("projected descriptor is all zeros") from exc
