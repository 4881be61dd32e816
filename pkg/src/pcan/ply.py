"""ASCII PLY with x, y, z and one per-vertex scalar property."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ply(path, coords, scalar, name: str = "attention") -> None:
    coords = np.asarray(coords, dtype=np.float64)
    scalar = np.asarray(scalar, dtype=np.float64).reshape(-1)
    if coords.ndim != 2 or coords.shape[1] != 3 or len(scalar) != len(coords):
        raise ValueError("need N x 3 coordinates and N scalars")
    head = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(coords)}",
        "property double x",
        "property double y",
        "property double z",
        f"property double {name}",
        "end_header",
    ]
    rows = (f"{x!r} {y!r} {z!r} {s!r}" for (x, y, z), s in zip(coords.tolist(), scalar.tolist()))
    Path(path).write_text("\n".join([*head, *rows]) + "\n")


def read_ply(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Vertices of an ASCII PLY as ``(xyz, {other_property: values})``."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply" or lines[1] != "format ascii 1.0":
        raise ValueError(f"{path}: not an ASCII PLY file")
    n, props, i = 0, [], 2
    while lines[i] != "end_header":
        parts = lines[i].split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[-1])
        i += 1
    body = np.loadtxt(lines[i + 1 : i + 1 + n], ndmin=2) if n else np.zeros((0, len(props)))
    cols = dict(zip(props, body.T))
    xyz = np.stack([cols.pop("x"), cols.pop("y"), cols.pop("z")], axis=1)
    return xyz, cols
