"""Sampling, grouping and interpolation kernels plus the SAG / FP layers.

All geometric kernels are deterministic functions of the coordinates alone:
they never look at the order points arrive in except to break exact ties, so
permuting a cloud permutes their outputs and nothing else.

The layer functions accept arrays with a leading batch axis (``[B, N, 3]``);
the kernels themselves work on a single cloud and the ``batch_*`` helpers
loop them over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class SagConfig:
    """One sampling-and-grouping layer: ``SAG(n_centroids, radius, k, widths)``."""

    n_centroids: int
    radius: float
    k: int
    mlp_widths: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.n_centroids < 1:
            raise ValueError("n_centroids must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive (inf allowed)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))


@dataclass(frozen=True)
class GroupIndex:
    """Centroid indices ``[..., N']`` and neighbour indices ``[..., N', K]``."""

    centroids: np.ndarray
    neighbors: np.ndarray


def _sqdist(points, center):
    d = points - center
    return d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2


def _first_lex(candidates, coords):
    """Among ``candidates`` pick the lexicographically smallest point, then lowest index."""
    if len(candidates) == 1:
        return int(candidates[0])
    c = coords[candidates]
    order = np.lexsort((candidates, c[:, 2], c[:, 1], c[:, 0]))
    return int(candidates[order[0]])


def _as_cloud(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 3 or len(coords) == 0:
        raise ValueError(f"expected a non-empty N x 3 cloud, got shape {coords.shape}")
    return coords


def farthest_point_sample(coords, n_samples: int) -> np.ndarray:
    """Iterative farthest point sampling.

    The seed is the point farthest from the cloud's mean; every later pick
    maximises the squared distance to the already selected set. Ties go to the
    lexicographically smallest coordinates. Returns indices in selection order.
    """
    coords = _as_cloud(coords)
    n = len(coords)
    if not 1 <= n_samples <= n:
        raise ValueError(f"cannot sample {n_samples} of {n} points")
    mean = np.array([math.fsum(coords[:, j]) / n for j in range(3)])
    d = _sqdist(coords, mean)
    pick = _first_lex(np.flatnonzero(d == d.max()), coords)
    out = np.empty(n_samples, dtype=np.int64)
    out[0] = pick
    mind = _sqdist(coords, coords[pick])
    mind[pick] = -1.0
    for i in range(1, n_samples):
        pick = _first_lex(np.flatnonzero(mind == mind.max()), coords)
        out[i] = pick
        mind = np.minimum(mind, _sqdist(coords, coords[pick]))
        mind[pick] = -1.0
    return out


def fps_min_distances(coords, selected) -> np.ndarray:
    """Distance of each newly picked point to the set selected before it."""
    coords = _as_cloud(coords)
    out = np.empty(len(selected) - 1)
    for i in range(1, len(selected)):
        prev = coords[selected[:i]]
        out[i - 1] = np.sqrt(_sqdist(prev, coords[selected[i]]).min())
    return out


def ball_query(coords, centroid_indices, radius: float, k: int) -> GroupIndex:
    """Up to ``k`` neighbours within ``radius`` of each centroid.

    Neighbours are listed in ascending index order. When more than ``k``
    points qualify the ``k`` nearest are kept (ties by coordinates), which
    keeps the grouped sets independent of input order. Short groups are
    padded by repeating their first entry; an empty group falls back to the
    centroid itself.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if not radius > 0:
        raise ValueError("radius must be positive")
    coords = _as_cloud(coords)
    centroid_indices = np.asarray(centroid_indices, dtype=np.int64)
    n = len(coords)
    d2 = _sqdist(coords[None, :, :], coords[centroid_indices][:, None, :])
    within = d2 <= radius * radius
    counts = within.sum(axis=1)
    # stable argsort of the negated mask lists qualifying indices first, ascending
    order = np.argsort(~within, axis=1, kind="stable")[:, : min(k, n)]
    neighbors = np.empty((len(centroid_indices), k), dtype=np.int64)
    for m, cnt in enumerate(counts):
        if cnt == 0:
            neighbors[m] = centroid_indices[m]
            continue
        if cnt > k:
            cand = np.flatnonzero(within[m])
            c = coords[cand]
            rank = np.lexsort((cand, c[:, 2], c[:, 1], c[:, 0], d2[m, cand]))
            row = np.sort(cand[rank[:k]])
        else:
            row = order[m, :cnt]
        neighbors[m, : len(row)] = row
        neighbors[m, len(row):] = row[0]
    return GroupIndex(centroid_indices, neighbors)


def relative_coords(coords, gi: GroupIndex) -> np.ndarray:
    """Neighbour coordinates minus their centroid, ``[..., N', K, 3]``."""
    coords = np.asarray(coords)
    if coords.ndim == 2:
        return coords[gi.neighbors] - coords[gi.centroids][:, None, :]
    b = np.arange(coords.shape[0])
    nb = coords[b[:, None, None], gi.neighbors]
    ce = coords[b[:, None], gi.centroids]
    return nb - ce[:, :, None, :]


def group_points(coords, features, gi: GroupIndex, rel=None) -> ad.Tensor:
    """Assemble groups ``[..., N', K, 3 + C]``: relative coords then features.

    ``rel`` may carry precomputed relative coordinates (same dtype as the
    features); ``features`` may be ``None`` for coordinate-only groups.
    """
    coords = np.asarray(coords)
    n = coords.shape[-2]
    if gi.neighbors.size and (gi.neighbors.min() < 0 or gi.neighbors.max() >= n):
        raise IndexError("group index out of range for this cloud")
    if gi.centroids.size and (gi.centroids.min() < 0 or gi.centroids.max() >= n):
        raise IndexError("centroid index out of range for this cloud")
    if rel is None:
        rel = relative_coords(coords, gi)
    if features is None:
        return ad.Tensor(rel)
    feats = ad.gather(features, gi.neighbors)
    rel = np.asarray(rel, dtype=feats.dtype)
    return ad.concat([rel, feats], axis=-1)


def three_nn_weights(fine, coarse, k: int = 3, power: float = 2.0, eps: float = 1e-10):
    """Inverse-distance interpolation weights from ``coarse`` onto ``fine``.

    Returns ``(idx [M, k'], w [M, k'])`` with ``k' = min(k, len(coarse))``;
    neighbours are sorted by distance (ties by index) and weights are
    proportional to ``1 / d**power``. A neighbour closer than ``eps`` receives
    the whole weight.
    """
    fine = _as_cloud(fine)
    coarse = np.asarray(coarse, dtype=np.float64)
    if coarse.ndim != 2 or len(coarse) == 0:
        raise ValueError("coarse point set is empty")
    kk = min(k, len(coarse))
    d2 = _sqdist(fine[:, None, :], coarse[None, :, :])
    idx = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    nd2 = np.take_along_axis(d2, idx, axis=1)
    close = nd2[:, 0] < eps * eps
    inv = 1.0 / np.where(close[:, None], 1.0, nd2) ** (power / 2)
    w = inv / inv.sum(axis=1, keepdims=True)
    w[close] = 0.0
    w[close, 0] = 1.0
    return idx, w


def interpolate(coarse_feats, idx, w) -> ad.Tensor:
    """Weighted sum of gathered coarse features, ``[..., M, C]``."""
    g = ad.gather(coarse_feats, idx)
    wt = np.asarray(w, dtype=g.dtype)[..., None]
    return ad.sum_(ad.mul(g, wt), axis=-2)


# ---------------------------------------------------------------------------
# shared MLPs and composite layers

def init_mlp(rng, prefix: str, c_in: int, widths: Sequence[int], dtype=np.float32) -> dict:
    """He-uniform weights, zero biases, names ``{prefix}.{i}.W`` / ``.b``."""
    params = {}
    for i, w in enumerate(widths):
        bound = math.sqrt(6.0 / c_in)
        params[f"{prefix}.{i}.W"] = rng.uniform(-bound, bound, size=(c_in, w)).astype(dtype)
        params[f"{prefix}.{i}.b"] = np.zeros(w, dtype=dtype)
        c_in = w
    return params


def shared_mlp(params: Mapping, prefix: str, x, n_layers: int, final_relu: bool = True):
    for i in range(n_layers):
        x = ad.apply_linear(x, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"])
        if final_relu or i < n_layers - 1:
            x = ad.relu(x)
    return x


def batch_ball_query(coords, centroids, radius, k) -> GroupIndex:
    coords = np.asarray(coords)
    if coords.ndim == 2:
        return ball_query(coords, centroids, radius, k)
    rows = [ball_query(c, ci, radius, k) for c, ci in zip(coords, centroids)]
    return GroupIndex(np.stack([r.centroids for r in rows]), np.stack([r.neighbors for r in rows]))


def batch_fps(coords, n_samples) -> np.ndarray:
    coords = np.asarray(coords)
    if coords.ndim == 2:
        return farthest_point_sample(coords, n_samples)
    return np.stack([farthest_point_sample(c, n_samples) for c in coords])


def take_points(coords, idx) -> np.ndarray:
    coords, idx = np.asarray(coords), np.asarray(idx)
    if coords.ndim == 2:
        return coords[idx]
    return np.take_along_axis(coords, idx[..., None], axis=-2)


def sag_layer(
    params: Mapping,
    coords,
    features,
    cfg: SagConfig,
    shared_centroids=None,
    prefix: str = "sag",
    group_index: GroupIndex | None = None,
    rel=None,
):
    """Sample, ball-query, group, shared MLP, max-pool.

    Returns ``(centroid_coords [..., N', 3], features [..., N', widths[-1]])``.
    ``shared_centroids`` skips the sampling step; ``group_index`` / ``rel``
    skip the neighbourhood search when the caller has cached them.
    """
    coords = np.asarray(coords)
    if group_index is None:
        cent = shared_centroids
        if cent is None:
            cent = batch_fps(coords, cfg.n_centroids)
        group_index = batch_ball_query(coords, np.asarray(cent), cfg.radius, cfg.k)
    if features is None or not cfg.mlp_widths:
        grouped = group_points(coords, features, group_index, rel=rel)
        h = shared_mlp(params, prefix, grouped, len(cfg.mlp_widths))
    else:
        h = _grouped_first_layer(params, prefix, coords, features, group_index, rel)
        h = ad.relu(h)
        for i in range(1, len(cfg.mlp_widths)):
            h = ad.relu(ad.apply_linear(h, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]))
    return take_points(coords, group_index.centroids), ad.set_max_pool(h)


def _grouped_first_layer(params, prefix, coords, features, gi: GroupIndex, rel):
    """First MLP layer over grouped ``[rel | feats]`` without materialising the groups.

    ``concat(rel, gather(F)) @ W == rel @ W[:3] + gather(F @ W[3:])``, so the
    feature part is projected once per point and only then gathered.
    """
    W, b = params[f"{prefix}.0.W"], params[f"{prefix}.0.b"]
    if rel is None:
        rel = relative_coords(coords, gi)
    feats_proj = ad.apply_linear(features, ad.slice_rows(W, 3, None))
    rel = np.asarray(rel, dtype=feats_proj.dtype)
    return ad.add(ad.apply_linear(rel, ad.slice_rows(W, 0, 3), b), ad.gather(feats_proj, gi.neighbors))


def fp_layer(
    params: Mapping,
    fine_coords,
    coarse_coords,
    coarse_feats,
    skip_feats,
    mlp_widths: Sequence[int],
    prefix: str = "fp",
    interp=None,
    k: int = 3,
    power: float = 2.0,
):
    """Propagate coarse features onto fine points, append skip features, run an MLP."""
    if interp is None:
        fine_coords, coarse_coords = np.asarray(fine_coords), np.asarray(coarse_coords)
        if coarse_coords.shape[-2] == 0:
            raise ValueError("coarse point set is empty")
        if fine_coords.ndim == 2:
            interp = three_nn_weights(fine_coords, coarse_coords, k, power)
        else:
            pairs = [three_nn_weights(f, c, k, power) for f, c in zip(fine_coords, coarse_coords)]
            interp = (np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))
    h = interpolate(coarse_feats, *interp)
    if skip_feats is not None:
        h = ad.concat([h, skip_feats], axis=-1)
    return shared_mlp(params, prefix, h, len(mlp_widths))
