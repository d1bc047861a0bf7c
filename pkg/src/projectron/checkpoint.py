"""Binary checkpoint container.

Layout::

    8 bytes   magic  b"PRJCKPT\\0"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length, uint64 little-endian
    header    UTF-8 JSON: architecture descriptor, tensor shapes, metadata
    payload   parameter tensors as little-endian float64, declaration order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import Model

MAGIC = b"PRJCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def to_bytes(model: Model, metadata: dict | None = None) -> bytes:
    header = {
        "architecture": model.descriptor(),
        "tensors": [{"shape": list(s), "dtype": "<f8"} for s in model.shapes],
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = model.flat.astype("<f8", copy=False).tobytes()
    return _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + payload


def from_bytes(data: bytes) -> tuple[Model, dict]:
    if len(data) < _PREFIX.size:
        raise CheckpointError("checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    model = Model.from_descriptor(header["architecture"])
    shapes = [tuple(t["shape"]) for t in header["tensors"]]
    if shapes != [tuple(s) for s in model.shapes]:
        raise CheckpointError("tensor table does not match the architecture")
    payload = data[start + header_len:]
    if len(payload) != 8 * model.flat.size:
        raise CheckpointError(
            f"payload holds {len(payload)} bytes, architecture needs {8 * model.flat.size}"
        )
    model.flat[...] = np.frombuffer(payload, dtype="<f8")
    return model, header["metadata"]


def save(path, model: Model, metadata: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(model, metadata))


def load(path) -> tuple[Model, dict]:
    return from_bytes(Path(path).read_bytes())
