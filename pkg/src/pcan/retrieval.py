"""Descriptor databases, exact nearest-neighbour ranking and recall metrics.

Descriptor matrix file: two little-endian uint64 (rows, cols) followed by
``rows * cols`` little-endian float64 values, row-major. Row metadata goes in
a sidecar ``<file>.meta.tsv`` with ``id  northing  easting`` per line.

Recall curve file: header ``n<TAB>recall``, one row per ``n``, then
``# recall@1<TAB>v`` and ``# recall@top1%<TAB>v`` summary lines. Recall values
are fractions in ``[0, 1]``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import ModelConfig, describe

CORRECT_MATCH_M = 25.0


class DescriptorFormatError(ValueError):
    pass


@dataclass
class DescriptorDB:
    matrix: np.ndarray
    ids: list[str]
    utm: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        self.utm = np.asarray(self.utm, dtype=np.float64).reshape(-1, 2)
        if len(self.ids) != len(self.matrix) or len(self.utm) != len(self.matrix):
            raise ValueError("descriptor rows and metadata differ in length")

    def __len__(self):
        return len(self.matrix)


def build_database(params, cfg: ModelConfig, submaps, geom=None, batch_size: int = 32) -> DescriptorDB:
    """One descriptor per submap via the full forward pass."""
    if not submaps:
        return DescriptorDB(np.zeros((0, cfg.vlad.output_dim)), [], np.zeros((0, 2)))
    n = {len(s.coords) for s in submaps}
    if len(n) == 1:
        coords = np.stack([s.coords for s in submaps])
        desc, _ = describe(params, coords, cfg, geom=geom, batch_size=batch_size)
    else:
        desc = np.stack([describe(params, s.coords, cfg)[0] for s in submaps])
    return DescriptorDB(desc, [s.id for s in submaps], np.array([s.utm for s in submaps]))


def rank(query, db: DescriptorDB) -> np.ndarray:
    """Database indices by ascending squared L2 distance, ties by index."""
    if len(db) == 0:
        raise ValueError("empty database")
    q = np.asarray(query, dtype=np.float64)
    d2 = ((db.matrix.astype(np.float64) - q) ** 2).sum(axis=1)
    return np.argsort(d2, kind="stable")


@dataclass
class RecallCurve:
    recall: np.ndarray  # recall[n - 1] = recall@n
    top1pct: float
    n_top1pct: int
    n_queries: int

    @property
    def at1(self) -> float:
        return float(self.recall[0])


def recall_curve(queries: DescriptorDB, db: DescriptorDB, max_n: int = 25,
                 threshold_m: float = CORRECT_MATCH_M) -> RecallCurve:
    """Fraction of queries with a match within ``threshold_m`` in their top ``n``.

    A query's own entry (same id) is removed from its database view. The top
    1% cut-off is ``ceil(M / 100)`` for a database of ``M`` rows.
    """
    if len(db) == 0:
        raise ValueError("empty database")
    m = len(db)
    n_top = max(1, math.ceil(m / 100))
    depth = max(max_n, n_top)
    hits_at = np.zeros(depth)
    for qi in range(len(queries)):
        order = rank(queries.matrix[qi], db)
        order = order[np.asarray(db.ids)[order] != queries.ids[qi]][:depth]
        geo = np.sqrt(((db.utm[order] - queries.utm[qi]) ** 2).sum(axis=1))
        hit = np.flatnonzero(geo <= threshold_m)
        if len(hit):
            hits_at[hit[0]:] += 1
    frac = hits_at / max(len(queries), 1)
    return RecallCurve(frac[:max_n], float(frac[n_top - 1]), n_top, len(queries))


# ---------------------------------------------------------------------------
# file formats

def write_descriptors(path, db: DescriptorDB) -> None:
    path = Path(path)
    mat = np.ascontiguousarray(db.matrix, dtype="<f8")
    path.write_bytes(struct.pack("<QQ", *mat.shape) + mat.tobytes())
    lines = [f"{i}\t{u[0]!r}\t{u[1]!r}" for i, u in zip(db.ids, db.utm.tolist())]
    Path(str(path) + ".meta.tsv").write_text("".join(line + "\n" for line in lines))


def read_descriptors(path) -> DescriptorDB:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DescriptorFormatError(f"{path}: truncated header")
    rows, cols = struct.unpack("<QQ", raw[:16])
    if len(raw) != 16 + rows * cols * 8:
        raise DescriptorFormatError(f"{path}: payload size does not match {rows}x{cols}")
    mat = np.frombuffer(raw[16:], dtype="<f8").reshape(rows, cols).astype(np.float64)
    meta = Path(str(path) + ".meta.tsv")
    if not meta.exists():
        raise FileNotFoundError(f"{meta}: missing descriptor metadata")
    ids, utm = [], []
    for line in meta.read_text().splitlines():
        parts = line.split("\t")
        if len(parts) != 3:
            raise DescriptorFormatError(f"{meta}: expected 3 fields per line")
        ids.append(parts[0])
        utm.append((float(parts[1]), float(parts[2])))
    if len(ids) != rows:
        raise DescriptorFormatError(f"{meta}: {len(ids)} records for {rows} rows")
    return DescriptorDB(mat, ids, np.array(utm).reshape(-1, 2))


def format_recall(curve: RecallCurve) -> str:
    lines = ["n\trecall"]
    lines += [f"{i + 1}\t{v!r}" for i, v in enumerate(curve.recall.tolist())]
    lines.append(f"# recall@1\t{curve.at1!r}")
    lines.append(f"# recall@top1%\t{curve.top1pct!r}")
    return "\n".join(lines) + "\n"


def write_recall(path, curve: RecallCurve) -> None:
    Path(path).write_text(format_recall(curve))


def read_recall(path) -> dict:
    rows, summary = {}, {}
    for line in Path(path).read_text().splitlines()[1:]:
        key, val = line.lstrip("# ").split("\t")
        if line.startswith("#"):
            summary[key] = float(val)
        else:
            rows[int(key)] = float(val)
    return {"curve": rows, **summary}
