"""Binary checkpoint format.

Layout (little-endian)::

    b"LIFASCKPT"  u32 version
    u32 json_length, json bytes (ModelSpec)
    repeated until EOF:
        u32 name_length, name (utf-8), u32 rank, rank x u32 dims, float32 values
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import LifasError
from ..fileio import atomic_write_bytes
from .model import Model, ModelSpec, init_model

MAGIC = b"LIFASCKPT"
VERSION = 1


class CheckpointError(LifasError):
    pass


def dumps(model: Model) -> bytes:
    spec_json = json.dumps(model.spec.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(spec_json)), spec_json]
    for name, value in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)) + encoded)
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(data: bytes) -> Model:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a LIFAS checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        version, json_len = struct.unpack_from("<II", data, pos)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos += 8
        spec = ModelSpec.from_dict(json.loads(data[pos:pos + json_len].decode()))
        pos += json_len
        params = {}
        while pos < len(data):
            (name_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(data):
                raise CheckpointError(f"parameter {name!r} is truncated")
            params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except (struct.error, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    expected = {k: v.shape for k, v in init_model(spec).params.items()}
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        bad = sorted(k for k in set(expected) | set(got) if expected.get(k) != got.get(k))
        raise CheckpointError(f"checkpoint parameters do not match its ModelSpec: {bad[:3]}")
    return Model(spec, params)


def save(model: Model, path) -> None:
    atomic_write_bytes(path, dumps(model))


def load(path) -> Model:
    try:
        with open(path, "rb") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
