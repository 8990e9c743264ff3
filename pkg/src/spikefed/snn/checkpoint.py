"""Parameter checkpoints: layout manifest + raw little-endian f32 values,
prefixed with a SHA-256 content hash for integrity."""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import FormatError
from .model import LayoutEntry, ParamVector

_MAGIC = b"SFCK"
_VERSION = 1
_HEAD = struct.Struct("<4sH")


def save_checkpoint(params: ParamVector, path) -> None:
    manifest = json.dumps(
        {
            "dtype": "f32",
            "total": len(params),
            "entries": [
                {
                    "name": e.name,
                    "offset": e.offset,
                    "length": e.length,
                    "shape": list(e.shape),
                    "trainable": e.trainable,
                }
                for e in params.layout
            ],
        },
        sort_keys=True,
    ).encode("utf-8")
    payload = struct.pack("<I", len(manifest)) + manifest
    payload += np.ascontiguousarray(params.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(_MAGIC, _VERSION))
        fh.write(hashlib.sha256(payload).digest())
        fh.write(payload)


def load_checkpoint(path) -> ParamVector:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size + 32 + 4:
        raise FormatError("file too short for a checkpoint")
    magic, version = _HEAD.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    digest = raw[_HEAD.size : _HEAD.size + 32]
    payload = raw[_HEAD.size + 32 :]
    if hashlib.sha256(payload).digest() != digest:
        raise FormatError("checkpoint content hash mismatch")

    (manifest_len,) = struct.unpack_from("<I", payload, 0)
    if 4 + manifest_len > len(payload):
        raise FormatError("truncated checkpoint manifest")
    try:
        manifest = json.loads(payload[4 : 4 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint manifest: {exc}") from exc

    total = manifest["total"]
    values_raw = payload[4 + manifest_len :]
    if len(values_raw) != 4 * total:
        raise FormatError(
            f"checkpoint holds {len(values_raw)} value bytes, manifest expects {4 * total}"
        )
    values = np.frombuffer(values_raw, dtype="<f4").astype(np.float32)
    layout = tuple(
        LayoutEntry(
            name=e["name"],
            offset=e["offset"],
            length=e["length"],
            shape=tuple(e["shape"]),
            trainable=e["trainable"],
        )
        for e in manifest["entries"]
    )
    return ParamVector(values, layout)
