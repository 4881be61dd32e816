"""Lazy quadruplet loss and geographic tuple mining."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad

POSITIVE_RADIUS_M = 10.0
NEGATIVE_RADIUS_M = 50.0


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.2

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("margins must be positive")


def sq_dist(a, b):
    """Squared Euclidean distance over the last axis."""
    return ad.sum_(ad.square(ad.sub(a, b)), axis=-1)


def quadruplet_from_distances(pos_dist, neg_dist, other_neg_dist, cfg: LossConfig = LossConfig()):
    """Hinge part of the loss given squared distances.

    ``pos_dist [..., P]`` anchor-positive, ``neg_dist [..., M]`` anchor-negative,
    ``other_neg_dist [..., M]`` other-negative-to-negative.
    """
    best_pos = ad.min_(pos_dist, axis=-1)
    best_pos = ad.reshape(best_pos, best_pos.shape + (1,))
    first = ad.relu(ad.sub(ad.add(best_pos, cfg.alpha), neg_dist))
    second = ad.relu(ad.sub(ad.add(best_pos, cfg.beta), other_neg_dist))
    return ad.add(ad.max_(first, axis=-1), ad.max_(second, axis=-1))


def lazy_quadruplet_loss(d_anchor, d_pos, d_neg, d_other, cfg: LossConfig = LossConfig()):
    """Lazy quadruplet loss for one tuple, or a batch of tuples along leading axes.

    Shapes: anchor ``[..., E]``, positives ``[..., P, E]``, negatives
    ``[..., M, E]``, other negative ``[..., E]``. Uses the closest positive,
    and the hardest negative in each of the two hinge terms.
    """
    pos, neg = ad._data(d_pos), ad._data(d_neg)
    if pos.ndim < 2 or pos.shape[-2] == 0:
        raise ValueError("need at least one positive")
    if neg.ndim < 2 or neg.shape[-2] == 0:
        raise ValueError("need at least one negative")

    def rowvec(x):
        shape = ad._data(x).shape
        return ad.reshape(x, shape[:-1] + (1, shape[-1]))

    a, o = rowvec(d_anchor), rowvec(d_other)
    return quadruplet_from_distances(sq_dist(a, d_pos), sq_dist(a, d_neg), sq_dist(o, d_neg), cfg)


@dataclass(frozen=True)
class TrainingTuple:
    anchor: str
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    other_negative: str


@dataclass
class MiningResult:
    tuples: list[TrainingTuple]
    skipped: list[str]


def geo_distances(utm) -> np.ndarray:
    utm = np.asarray(utm, dtype=np.float64)
    diff = utm[:, None, :] - utm[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def candidate_sets(utm, pos_radius=POSITIVE_RADIUS_M, neg_radius=NEGATIVE_RADIUS_M):
    """Per anchor, sorted positive and negative index arrays (self excluded)."""
    d = geo_distances(utm)
    n = len(d)
    eye = np.eye(n, dtype=bool)
    pos = [np.flatnonzero((d[i] <= pos_radius) & ~eye[i]) for i in range(n)]
    neg = [np.flatnonzero(d[i] >= neg_radius) for i in range(n)]
    return pos, neg, d


def mine_tuples(
    ids: Sequence[str],
    utm,
    n_pos: int = 1,
    n_neg: int = 2,
    seed: int = 0,
    pos_radius: float = POSITIVE_RADIUS_M,
    neg_radius: float = NEGATIVE_RADIUS_M,
) -> MiningResult:
    """Draw one tuple per anchor from geographic tags.

    Positives lie within ``pos_radius`` metres, negatives at least
    ``neg_radius`` metres away; the other negative is at least ``neg_radius``
    from the anchor and from every chosen negative. Anchors without a positive,
    without ``n_neg`` negatives, or without an other-negative are skipped.
    """
    if n_pos < 1 or n_neg < 1:
        raise ValueError("n_pos and n_neg must be >= 1")
    ids = list(ids)
    pos, neg, d = candidate_sets(utm, pos_radius, neg_radius)
    rng = np.random.default_rng(seed)
    tuples, skipped = [], []
    for i, anchor in enumerate(ids):
        if len(pos[i]) == 0 or len(neg[i]) < n_neg:
            skipped.append(anchor)
            continue
        p = rng.choice(pos[i], size=min(n_pos, len(pos[i])), replace=False)
        ng = rng.choice(neg[i], size=n_neg, replace=False)
        far = (d[neg[i]][:, ng] >= neg_radius).all(axis=1)
        others = neg[i][far & ~np.isin(neg[i], ng)]
        if len(others) == 0:
            skipped.append(anchor)
            continue
        o = rng.choice(others)
        tuples.append(
            TrainingTuple(anchor, tuple(ids[j] for j in p), tuple(ids[j] for j in ng), ids[int(o)])
        )
    return MiningResult(tuples, skipped)
