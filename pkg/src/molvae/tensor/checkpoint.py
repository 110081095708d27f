"""Binary checkpoint container ("RGCV" v1).

Layout, all integers little-endian::

    b"RGCV" | u32 version | u32 entry count
    per entry: u32 key length | UTF-8 key | u8 dtype code | u8 rank
               | rank x u64 dims | payload

dtype codes: 0 = f32, 1 = f64, 2 = i64, 3 = u8.  Strings (config, hashes)
are stored as u8 arrays.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile

import numpy as np

MAGIC = b"RGCV"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
CODES = {np.dtype(v).str: k for k, v in DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _code_for(arr):
    kind = arr.dtype.kind
    if kind == "f":
        return 0 if arr.dtype.itemsize == 4 else 1
    if kind in "iub" and arr.dtype != np.uint8:
        return 2
    if arr.dtype == np.uint8:
        return 3
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def encode_string(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def decode_string(arr):
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")


def dumps(entries):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(entries)))
    for key, value in entries.items():
        arr = np.asarray(value)
        code = _code_for(arr)
        arr = np.ascontiguousarray(arr, dtype=DTYPES[code])
        kb = key.encode("utf-8")
        buf.write(struct.pack("<I", len(kb)))
        buf.write(kb)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob):
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic; not an RGCV checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            key = blob[pos:pos + klen].decode("utf-8")
            pos += klen
            code, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            dt = DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(blob):
                raise CheckpointError(f"truncated payload for {key}")
            out[key] = np.frombuffer(blob, dtype=dt, count=int(np.prod(dims, dtype=np.int64)),
                                     offset=pos).reshape(dims).copy()
            pos += nbytes
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return out


def atomic_write_bytes(path, blob):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, entries):
    atomic_write_bytes(path, dumps(entries))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
