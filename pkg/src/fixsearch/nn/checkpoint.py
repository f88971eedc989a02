"""Parameter checkpoints in the FDMP container.

Layout (little-endian):
    b"FDMP" | version u8 (=1) | reserved u8 x3 | manifest length u32 | reserved u32
    manifest: UTF-8 JSON ``{"params": [{"name": str, "shape": [int, ...]}, ...]}``
    payload: every parameter as float64 row-major, concatenated in manifest order
"""

from __future__ import annotations

import json
import struct

import numpy as np

from fixsearch.errors import FormatError

MAGIC = b"FDMP"
_HEADER = struct.Struct("<4sB3xII")


def dump_params(named):
    """Serialize an ordered list of (name, ndarray) pairs."""
    manifest = {"params": [{"name": n, "shape": list(np.shape(a))} for n, a in named]}
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in named)
    return _HEADER.pack(MAGIC, 1, len(blob), 0) + blob + body


def load_params(raw):
    if len(raw) < _HEADER.size:
        raise FormatError("truncated checkpoint header", offset=len(raw))
    magic, version, mlen, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != 1:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    start = _HEADER.size
    if len(raw) < start + mlen:
        raise FormatError("truncated manifest", offset=len(raw))
    try:
        manifest = json.loads(raw[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest: {exc}", offset=start) from exc
    pos = start + mlen
    out = []
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise FormatError(f"truncated payload for {entry['name']}", offset=pos)
        arr = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        out.append((entry["name"], arr))
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes", offset=pos)
    return out
