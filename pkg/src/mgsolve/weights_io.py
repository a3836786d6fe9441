"""Binary weight files.

Layout, all little-endian::

    b"MGCN"                      magic
    u32 version                  = 1
    u32 tensor_count
    per tensor:
        u16 name_len, name (UTF-8)
        u8 rank, rank x u32 dims
        prod(dims) x f64 values

Tensors are written in registry order; values are stored as float64
regardless of the in-memory precision.
"""
import struct

import numpy as np

from .learned import SolverWeights

MAGIC = b"MGCN"
VERSION = 1


class WeightFileError(ValueError):
    """Malformed, truncated or incompatible weight file."""


def dumps(weights):
    out = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, value in weights.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(out)


def loads(buf):
    if len(buf) < 12:
        raise WeightFileError("file too short for a header")
    if buf[:4] != MAGIC:
        raise WeightFileError(f"magic mismatch: expected {MAGIC!r}, got {bytes(buf[:4])!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    pos = 12
    params = {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFileError("truncated weight file")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
        if name in params:
            raise WeightFileError(f"duplicate tensor {name!r}")
        params[name] = values
    if pos != len(buf):
        raise WeightFileError(f"{len(buf) - pos} trailing bytes after {count} tensors")
    if "rhs_rechannel" not in params:
        raise WeightFileError("weight file does not contain the complete registry")
    try:
        return SolverWeights(params)
    except (KeyError, ValueError) as exc:
        raise WeightFileError(f"weight file does not match the registry: {exc}") from exc


def save_weights(weights, path):
    with open(path, "wb") as fh:
        fh.write(dumps(weights))


def load_weights(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
