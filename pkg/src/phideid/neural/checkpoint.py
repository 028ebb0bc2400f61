"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"PHIDCKPT"                 8-byte magic
    u32 format version
    u32 header length, header   UTF-8 JSON (dims, schema hash, label set, ...)
    u32 tensor count
    per tensor:
        u16 name length, name   UTF-8
        u8 ndim, ndim x u64     shape
        float64 LE data         row-major

A JSON manifest mirror (``<path>.json``) repeats the header and lists tensor
shapes and sums for inspection; it is never read back.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PHIDCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path: str | Path, header: dict, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "header": header,
        "tensors": {n: {"shape": list(np.shape(a)), "sum": float(np.sum(a))} for n, a in tensors.items()},
    }
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _take(buf: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise CheckpointError("truncated checkpoint")
    return bytes(buf[pos:pos + n]), pos + n


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = memoryview(Path(path).read_bytes())
    magic, pos = _take(buf, 0, 8)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    raw, pos = _take(buf, pos, 8)
    version, hlen = struct.unpack("<II", raw)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    raw, pos = _take(buf, pos, hlen)
    header = json.loads(raw.decode("utf-8"))
    raw, pos = _take(buf, pos, 4)
    (count,) = struct.unpack("<I", raw)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 2)
        (nlen,) = struct.unpack("<H", raw)
        raw, pos = _take(buf, pos, nlen)
        name = raw.decode("utf-8")
        raw, pos = _take(buf, pos, 1)
        (ndim,) = struct.unpack("<B", raw)
        raw, pos = _take(buf, pos, 8 * ndim)
        shape = struct.unpack(f"<{ndim}Q", raw)
        size = int(np.prod(shape)) if ndim else 1
        raw, pos = _take(buf, pos, 8 * size)
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return header, tensors
