"""Checkpoint container.

Layout (little-endian)::

    magic    8 bytes  b"CAPECKPT"
    version  u32
    meta_len u32, meta: UTF-8 JSON (model/train config, rng state, progress)
    count    u32
    count x tensor:
        name_len u16, name UTF-8
        rank     u8, dims rank x u32
        payload  prod(dims) x f64
"""
import json
import struct

import numpy as np

from .errors import BadMagic, DataError, TruncatedFile

MAGIC = b"CAPECKPT"
VERSION = 1


def save_checkpoint(path, tensors, meta):
    """Write ``{name: ndarray}`` and a JSON-serialisable ``meta`` dict."""
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path):
    """Return ``(tensors, meta)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (bad magic)")
    try:
        version, meta_len = struct.unpack_from("<II", buf, 8)
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            if pos + 8 * size > len(buf):
                raise TruncatedFile(f"{path}: tensor {name!r} truncated")
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
            pos += 8 * size
    except struct.error:
        raise TruncatedFile(f"{path}: truncated checkpoint") from None
    return tensors, meta
