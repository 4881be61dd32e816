"""Submap files, dataset manifests and a synthetic urban-scene generator.

Submap file: ``N * 3`` little-endian float64 values, row-major, no header.
Benchmark submaps hold exactly 4096 points (98304 bytes).

Manifest: UTF-8 text, one record per line, tab-separated
``id  path  northing  easting  split``; lines starting with ``#`` are comments.
Paths are relative to the manifest's directory.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BENCHMARK_POINTS = 4096
COORD_TOL = 1e-6

STRUCTURE, FOLIAGE, FLOATER = 0, 1, 2
LABEL_NAMES = {STRUCTURE: "structure", FOLIAGE: "foliage", FLOATER: "floater"}


class SubmapFormatError(ValueError):
    pass


class SubmapValidationError(ValueError):
    pass


@dataclass
class Submap:
    id: str
    coords: np.ndarray
    utm: tuple[float, float]
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or len(self.coords) == 0:
            raise SubmapValidationError(f"{self.id}: expected N x 3 coordinates")
        if not np.all(np.isfinite(self.coords)):
            raise SubmapValidationError(f"{self.id}: non-finite coordinates")
        self.utm = (float(self.utm[0]), float(self.utm[1]))


def save_submap(path, coords) -> None:
    coords = np.asarray(coords, dtype="<f8")
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise SubmapValidationError("expected N x 3 coordinates")
    Path(path).write_bytes(np.ascontiguousarray(coords).tobytes())


def load_submap(path, utm, id: str | None = None, n_points: int | None = BENCHMARK_POINTS) -> Submap:
    """Read a binary submap; ``n_points=None`` accepts any whole number of points."""
    raw = Path(path).read_bytes()
    if n_points is not None and len(raw) != n_points * 24:
        raise SubmapFormatError(f"{path}: {len(raw)} bytes, expected {n_points * 24}")
    if len(raw) == 0 or len(raw) % 24:
        raise SubmapFormatError(f"{path}: {len(raw)} bytes is not a whole number of xyz points")
    coords = np.frombuffer(raw, dtype="<f8").reshape(-1, 3).astype(np.float64)
    if not np.all(np.isfinite(coords)):
        raise SubmapValidationError(f"{path}: non-finite coordinates")
    if np.abs(coords).max() > 1 + COORD_TOL:
        raise SubmapValidationError(f"{path}: coordinates outside [-1, 1]^3")
    return Submap(id or Path(path).stem, coords, utm)


# ---------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    northing: float
    easting: float
    split: str


def write_manifest(path, records) -> None:
    lines = ["# id\tpath\tnorthing\teasting\tsplit"]
    for r in records:
        lines.append(f"{r.id}\t{r.path}\t{r.northing!r}\t{r.easting!r}\t{r.split}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> list[ManifestRecord]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise SubmapFormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
        try:
            out.append(ManifestRecord(parts[0], parts[1], float(parts[2]), float(parts[3]), parts[4]))
        except ValueError as exc:
            raise SubmapFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def load_manifest(path, split: str | None = None, n_points: int | None = None) -> list[Submap]:
    """Load every submap listed in a manifest (optionally one split); labels if present."""
    root = Path(path).parent
    subs = []
    for r in read_manifest(path):
        if split is not None and r.split != split:
            continue
        sm = load_submap(root / r.path, (r.northing, r.easting), r.id, n_points)
        lbl = root / "labels" / f"{r.id}.npy"
        if lbl.exists():
            sm.labels = np.load(lbl)
        subs.append(sm)
    return subs


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class SynthConfig:
    n_train_scenes: int = 200
    n_test_scenes: int = 50
    points_per_scene: int = 512
    structure_fraction: float = 0.6
    foliage_fraction: float = 0.2
    floater_fraction: float = 0.2
    scans_per_train_scene: int = 2
    jitter: float = 0.01
    floater_clearance: float = 0.15
    grid_spacing_m: float = 100.0
    scan_offset_m: float = 3.0
    seed: int = 0

    def __post_init__(self):
        fr = (self.structure_fraction, self.foliage_fraction, self.floater_fraction)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"point fractions must be non-negative and sum to 1, got {fr}")
        if self.points_per_scene < 64:
            raise ValueError("points_per_scene must be >= 64")
        if self.structure_fraction == 0:
            raise ValueError("scenes need some structure points")
        if self.grid_spacing_m < 50 + 2 * self.scan_offset_m:
            raise ValueError("grid spacing too small to keep distinct scenes >= 50 m apart")
        if 2 * self.scan_offset_m > 10:
            raise ValueError("scan offset too large to keep re-scans <= 10 m apart")
        if self.scans_per_train_scene < 2:
            raise ValueError("training scenes need at least two scans")

    def counts(self) -> tuple[int, int, int]:
        n = self.points_per_scene
        fol = int(round(n * self.foliage_fraction))
        flo = int(round(n * self.floater_fraction))
        return n - fol - flo, fol, flo


@dataclass
class SyntheticDataset:
    train: list[Submap] = field(default_factory=list)
    test_db: list[Submap] = field(default_factory=list)
    test_query: list[Submap] = field(default_factory=list)

    def splits(self) -> dict[str, list[Submap]]:
        return {"train": self.train, "test_db": self.test_db, "test_query": self.test_query}


@dataclass
class _Scene:
    structure: np.ndarray
    foliage_centers: np.ndarray
    utm: tuple[float, float]


def _sample_facades(rng, n_points):
    """Points on 2-4 random vertical rectangles rising from the floor."""
    n_facades = int(rng.integers(2, 5))
    centers = rng.uniform(-0.7, 0.7, size=(n_facades, 2))
    angles = rng.uniform(0, np.pi, size=n_facades)
    widths = rng.uniform(0.6, 1.6, size=n_facades)
    heights = rng.uniform(0.5, 1.8, size=n_facades)
    area = widths * heights
    which = rng.choice(n_facades, size=n_points, p=area / area.sum())
    u = rng.uniform(-0.5, 0.5, size=n_points) * widths[which]
    v = rng.uniform(0.0, 1.0, size=n_points) * heights[which]
    x = centers[which, 0] + u * np.cos(angles[which])
    y = centers[which, 1] + u * np.sin(angles[which])
    z = -1.0 + v
    return np.clip(np.stack([x, y, z], axis=1), -1, 1)


def _sample_floaters(rng, n, occupied, clearance):
    """Uniform points whose nearest neighbour (any point) is farther than ``clearance``."""
    pts = []
    occ = occupied
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > 1000 * max(n, 1):
            raise ValueError("cannot place floaters: scene too crowded for the clearance")
        c = rng.uniform(-1, 1, size=3)
        if np.min(((occ - c) ** 2).sum(axis=1)) > clearance * clearance:
            pts.append(c)
            occ = np.vstack([occ, c])
    return np.array(pts).reshape(-1, 3)


def _make_scene(cfg: SynthConfig, scene_idx: int, utm) -> _Scene:
    rng = np.random.default_rng([cfg.seed, scene_idx, 0])
    n_struct, _, _ = cfg.counts()
    structure = _sample_facades(rng, n_struct)
    foliage_centers = rng.uniform(-0.8, 0.8, size=(int(rng.integers(3, 7)), 3))
    foliage_centers[:, 2] = rng.uniform(-0.8, 0.2, size=len(foliage_centers))
    return _Scene(structure, foliage_centers, utm)


def _scan(cfg: SynthConfig, scene: _Scene, scene_idx: int, scan_idx: int, split: str) -> Submap:
    rng = np.random.default_rng([cfg.seed, scene_idx, 1 + scan_idx])
    _, n_fol, n_flo = cfg.counts()
    structure = np.clip(scene.structure + rng.normal(0, cfg.jitter, scene.structure.shape), -1, 1)
    which = rng.integers(0, len(scene.foliage_centers), size=n_fol)
    foliage = scene.foliage_centers[which] + rng.normal(0, 0.05, size=(n_fol, 3))
    foliage = np.clip(foliage, -1, 1)
    floaters = _sample_floaters(rng, n_flo, np.vstack([structure, foliage]), cfg.floater_clearance)
    coords = np.vstack([structure, foliage, floaters])
    labels = np.concatenate(
        [np.full(len(structure), STRUCTURE), np.full(n_fol, FOLIAGE), np.full(n_flo, FLOATER)]
    ).astype(np.int8)
    perm = rng.permutation(len(coords))
    ang = rng.uniform(0, 2 * np.pi)
    r = cfg.scan_offset_m * math.sqrt(rng.uniform())
    utm = (scene.utm[0] + r * math.cos(ang), scene.utm[1] + r * math.sin(ang))
    return Submap(f"{split}_{scene_idx:05d}_{scan_idx}", coords[perm], utm, labels[perm])


def generate_synthetic_dataset(cfg: SynthConfig) -> SyntheticDataset:
    """Deterministic labelled scenes; train and test scenes never share a grid cell.

    Each scene gets fixed facade geometry. A scan jitters the facade points and
    draws fresh foliage (around fixed blob centres) and fresh floaters, then
    shuffles the points. Test scenes get one database scan and one query scan.
    """
    total = cfg.n_train_scenes + cfg.n_test_scenes
    side = int(math.ceil(math.sqrt(total)))
    ds = SyntheticDataset()
    for idx in range(total):
        row, col = divmod(idx, side)
        utm = (5_000_000.0 + row * cfg.grid_spacing_m, 600_000.0 + col * cfg.grid_spacing_m)
        scene = _make_scene(cfg, idx, utm)
        if idx < cfg.n_train_scenes:
            ds.train.extend(_scan(cfg, scene, idx, s, "train") for s in range(cfg.scans_per_train_scene))
        else:
            ds.test_db.append(_scan(cfg, scene, idx, 0, "test"))
            ds.test_query.append(_scan(cfg, scene, idx, 1, "test"))
    return ds


def write_dataset(ds: SyntheticDataset, out_dir) -> Path:
    """Write submaps, labels and ``manifest.tsv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "submaps").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(exist_ok=True)
    records = []
    for split, subs in ds.splits().items():
        for sm in subs:
            rel = os.path.join("submaps", f"{sm.id}.bin")
            save_submap(out / rel, sm.coords)
            if sm.labels is not None:
                np.save(out / "labels" / f"{sm.id}.npy", sm.labels)
            records.append(ManifestRecord(sm.id, rel, sm.utm[0], sm.utm[1], split))
    manifest = out / "manifest.tsv"
    write_manifest(manifest, records)
    return manifest


def nearest_neighbor_distance(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(d2.min(axis=1))
