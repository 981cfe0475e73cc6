"""Binary checkpoint format.

Layout::

    b"SCNNCKPT"                  8-byte magic
    uint32 LE                    format version
    uint64 LE                    manifest length in bytes
    manifest                     UTF-8 JSON: entries [{name, shape, offset}], payload_bytes
    payload                      little-endian float64 values, offsets relative to payload start
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from safecage.nn.params import ParameterSet, ShapeError

MAGIC = b"SCNNCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQ")


class CorruptCheckpointError(ValueError):
    pass


def checkpoint_bytes(params: ParameterSet) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, value in params.items():
        raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(value.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {"format_version": FORMAT_VERSION, "entries": entries, "payload_bytes": offset},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    return MAGIC + _HEADER.pack(FORMAT_VERSION, len(manifest)) + manifest + b"".join(chunks)


def checkpoint_save(params: ParameterSet, path: str | os.PathLike) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params))
    os.replace(tmp, path)
    return path


def checkpoint_parse(data: bytes) -> ParameterSet:
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("bad magic")
    pos = len(MAGIC)
    if len(data) < pos + _HEADER.size:
        raise CorruptCheckpointError("truncated header")
    version, mlen = _HEADER.unpack_from(data, pos)
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported format version {version}")
    pos += _HEADER.size
    try:
        manifest = json.loads(data[pos:pos + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable manifest: {exc}") from None
    payload = data[pos + mlen:]
    if len(payload) != manifest.get("payload_bytes"):
        raise CorruptCheckpointError(
            f"payload is {len(payload)} bytes, manifest declares {manifest.get('payload_bytes')}"
        )
    params = ParameterSet()
    expected_offset = 0
    for e in manifest["entries"]:
        shape = tuple(int(d) for d in e["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if e["offset"] != expected_offset or e["offset"] + nbytes > len(payload):
            raise CorruptCheckpointError(f"entry {e['name']!r} does not fit the payload")
        arr = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=e["offset"]).reshape(shape)
        params.add(e["name"], arr.astype(np.float64))
        expected_offset += nbytes
    if expected_offset != len(payload):
        raise CorruptCheckpointError("payload has trailing bytes")
    return params


def checkpoint_load(path: str | os.PathLike, network=None) -> ParameterSet:
    """Load a checkpoint; if ``network`` is given, its layout must match."""
    params = checkpoint_parse(Path(path).read_bytes())
    if network is not None:
        try:
            network.check_params(params)
        except ShapeError as exc:
            raise ShapeError(f"{path}: {exc}") from None
    return params
