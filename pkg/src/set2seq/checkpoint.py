"""Binary parameter checkpoints.

Layout (little-endian)::

    8 bytes   magic  b"S2SCKPT\\x00"
    u32       format version
    u32       length of the JSON header in bytes
    ...       UTF-8 JSON header: {"params": [{"name", "shape"}...], "meta": {...}}
    ...       contiguous float64 payload, parameters in header order
"""
import json
import struct

import numpy as np

MAGIC = b"S2SCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params, meta=None):
    """Serialize an ordered ``{name: array}`` mapping to bytes."""
    manifest = [{"name": k, "shape": list(np.shape(v))} for k, v in params.items()]
    header = json.dumps({"params": manifest, "meta": meta or {}}, sort_keys=True).encode()
    payload = b"".join(np.asarray(v, dtype="<f8").tobytes(order="C") for v in params.values())
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload


def loads(buf):
    if buf[:8] != MAGIC:
        raise CheckpointError("not a set2seq checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", buf[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(buf[16:16 + hlen].decode())
    offset = 16 + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(buf):
            raise CheckpointError(f"truncated payload at parameter {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(buf[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} trailing bytes after payload")
    return params, header["meta"]


def save(path, params, meta=None):
    with open(path, "wb") as f:
        f.write(dumps(params, meta))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
