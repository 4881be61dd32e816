"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    b"PCANCKPT"  u32 version  u32 n_records
    n_records x ( u16 name_len, name (utf-8), u8 rank, rank x u64 dims,
                  2-byte dtype tag, payload )

Dtype tags: ``f4``, ``f8``, ``i8``, ``u1``. Parsing completes before anything
is returned, so a truncated or corrupt file never yields a partial load.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PCANCKPT"
VERSION = 1
_TAGS = {b"f4": "<f4", b"f8": "<f8", b"i8": "<i8", b"u1": "u1"}
_TAG_OF = {np.dtype(v): k for k, v in _TAGS.items()}


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    config_text: str = ""
    rng_state: dict = field(default_factory=dict)
    epoch: int = 0

    @property
    def precision(self) -> str:
        dt = {v.dtype for v in self.params.values()}
        return "float64" if np.dtype(np.float64) in dt else "float32"


def _tag(arr: np.ndarray) -> bytes:
    try:
        return _TAG_OF[arr.dtype.newbyteorder("<")]
    except KeyError:
        raise CheckpointFormatError(f"unsupported dtype {arr.dtype}") from None


def encode_records(records: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        tag = _tag(arr)
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(tag)
        out.append(np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes())
    return b"".join(out)


def decode_records(raw: bytes) -> dict[str, np.ndarray]:
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointFormatError("checkpoint truncated")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointFormatError(f"checkpoint version {version}, expected {VERSION}")
    records = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        tag = take(2)
        if tag not in _TAGS:
            raise CheckpointFormatError(f"unknown dtype tag {tag!r}")
        dt = np.dtype(_TAGS[tag])
        size = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        records[name] = np.frombuffer(take(size), dtype=dt).reshape(dims).copy()
    if pos != len(raw):
        raise CheckpointFormatError("trailing bytes after last record")
    return records


def _text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    records = {f"param/{k}": v for k, v in ckpt.params.items()}
    records.update({f"opt/{k}": v for k, v in ckpt.opt_state.items()})
    records["meta/config"] = _text(ckpt.config_text)
    records["meta/rng"] = _text(json.dumps(ckpt.rng_state, sort_keys=True))
    records["meta/epoch"] = np.array(ckpt.epoch, dtype=np.int64)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_records(records))
    os.replace(tmp, path)


def load_checkpoint(path, precision: str | None = None) -> Checkpoint:
    """Read a checkpoint; ``precision`` ("float32"/"float64") refuses a mismatch."""
    records = decode_records(Path(path).read_bytes())
    try:
        ckpt = Checkpoint(
            params={k[6:]: v for k, v in records.items() if k.startswith("param/")},
            opt_state={k[4:]: v for k, v in records.items() if k.startswith("opt/")},
            config_text=records["meta/config"].tobytes().decode("utf-8"),
            rng_state=json.loads(records["meta/rng"].tobytes().decode("utf-8")),
            epoch=int(records["meta/epoch"]),
        )
    except KeyError as exc:
        raise CheckpointFormatError(f"checkpoint missing record {exc}") from None
    if precision is not None and ckpt.params and ckpt.precision != precision:
        raise CheckpointFormatError(
            f"checkpoint holds {ckpt.precision} parameters; refusing to load as {precision}"
        )
    return ckpt
