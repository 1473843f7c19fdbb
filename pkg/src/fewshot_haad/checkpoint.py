"""Checkpoint container: magic, JSON header, then raw little-endian f32 tensors.

Layout::

    b"HAADCKPT" | uint32 LE header length | UTF-8 JSON header | tensor bytes

The header lists ``tensors`` as ``[{"name", "shape"}, ...]`` in storage order;
everything else in it (``kind``, ``config``, ``meta``) is free-form JSON.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CompatibilityError

MAGIC = b"HAADCKPT"
DTYPE = np.dtype("<f4")


def save_checkpoint(path, kind: str, tensors: dict, config: dict, meta: dict | None = None) -> None:
    header = {
        "kind": kind,
        "config": config,
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype=DTYPE).tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise CompatibilityError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", fh.read(4))
    return json.loads(fh.read(n).decode())


def load_checkpoint(path, kind: str | None = None) -> tuple[dict, dict]:
    """Return ``(header, tensors)``; tensors come back as float64."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        if kind is not None and header.get("kind") != kind:
            raise CompatibilityError(f"{path}: expected a {kind!r} checkpoint, found {header.get('kind')!r}")
        tensors = {}
        for spec in header["tensors"]:
            count = int(np.prod(spec["shape"], dtype=np.int64))
            raw = np.frombuffer(fh.read(count * DTYPE.itemsize), dtype=DTYPE)
            if raw.size != count:
                raise CompatibilityError(f"{path}: truncated tensor {spec['name']}")
            tensors[spec["name"]] = raw.reshape(spec["shape"]).astype(np.float64)
    return header, tensors
