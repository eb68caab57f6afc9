"""Binary named-tensor tables, used for checkpoints and feature files.

Layout (little-endian)::

    b"MYNA" | u32 version | u32 n + n bytes config text (UTF-8)
    | u32 tensor count
    | per tensor: u32 n + n bytes name | u8 dtype | u8 rank | u64 dims[rank] | payload
    | u32 CRC32 of every preceding byte

dtype tags: 0 = float32, 1 = int64.
"""
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from maskclr.errors import CorruptionError, FormatError

MAGIC = b"MYNA"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}
TAGS = {np.dtype("float32"): 0, np.dtype("int64"): 1}


def _coerce(arr):
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub":
        return arr.astype("<i8"), 1
    if arr.dtype.kind == "f":
        return arr.astype("<f4"), 0
    raise TypeError(f"cannot store dtype {arr.dtype}")


def dumps(config_text, tensors):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    blob = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr, tag = _coerce(value)
        key = name.encode("utf-8")
        parts += [struct.pack("<I", len(key)), key, struct.pack("<BB", tag, arr.ndim)]
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptionError("tensor table is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf):
    """Return ``(config_text, {name: ndarray})``."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError("bad magic: not a tensor table")
    if len(buf) < 8:
        raise CorruptionError("tensor table is truncated")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor-table version {version}")
    if len(buf) < 12:
        raise CorruptionError("tensor table is truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptionError("checksum mismatch (truncated or damaged file)")
    r = _Reader(body)
    r.take(8)
    (n,) = r.unpack("<I")
    config_text = r.take(n).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("<I")
        name = r.take(n).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in DTYPES:
            raise FormatError(f"unknown dtype tag {tag} for {name!r}")
        dims = r.unpack(f"<{rank}Q")
        dt = DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(dims)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(body):
        raise CorruptionError("trailing bytes after tensor table")
    return config_text, tensors


def atomic_write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_table(path, config_text, tensors):
    atomic_write(path, dumps(config_text, tensors))


def load_table(path):
    return loads(Path(path).read_bytes())
