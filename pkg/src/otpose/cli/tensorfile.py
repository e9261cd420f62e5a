"""The on-disk tensor container.

Layout (all little-endian): 4-byte magic ``OTT1``, u32 rank, rank u64
extents, then the payload as float32 row-major.  A file may carry a trailing
manifest of named tensors after the primary payload: u32 count followed by
records of (u32 name length, UTF-8 name, u32 rank, extents, payload).
Containers (e.g. checkpoints) use an empty rank-1 primary tensor and put
everything in the manifest.  Round trips are bit-exact at float32.
"""

from __future__ import annotations

import struct
from typing import Optional

import numpy as np

MAGIC = b"OTT1"


class TensorFileError(ValueError):
    pass


def _pack_tensor(arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<I", data.ndim)
    head += struct.pack(f"<{data.ndim}Q", *data.shape)
    return head + data.tobytes()


def _unpack_tensor(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    if off + 4 > len(buf):
        raise TensorFileError("truncated file: missing rank")
    (rank,) = struct.unpack_from("<I", buf, off)
    off += 4
    if off + 8 * rank > len(buf):
        raise TensorFileError("truncated file: missing extents")
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    nbytes = 4 * count
    if off + nbytes > len(buf):
        raise TensorFileError("truncated file: payload shorter than extents")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims)
    return arr.copy(), off + nbytes


def save(path, primary: np.ndarray,
         named: Optional[dict[str, np.ndarray]] = None) -> None:
    out = bytearray(MAGIC)
    out += _pack_tensor(np.asarray(primary))
    if named is not None:
        out += struct.pack("<I", len(named))
        for name, arr in named.items():
            nb = name.encode("utf-8")
            out += struct.pack("<I", len(nb)) + nb
            out += _pack_tensor(np.asarray(arr))
    with open(path, "wb") as f:
        f.write(bytes(out))


def load(path) -> tuple[np.ndarray, Optional[dict[str, np.ndarray]]]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise TensorFileError(f"{path}: bad magic {buf[:4]!r}")
    primary, off = _unpack_tensor(buf, 4)
    if off == len(buf):
        return primary, None
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    named: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        arr, off = _unpack_tensor(buf, off)
        named[name] = arr
    if off != len(buf):
        raise TensorFileError(f"{path}: {len(buf) - off} trailing bytes")
    return primary, named


def save_tensor(path, arr: np.ndarray) -> None:
    save(path, arr)


def load_tensor(path) -> np.ndarray:
    primary, named = load(path)
    if named is not None:
        raise TensorFileError(f"{path}: expected a single tensor, found a container")
    return primary


def save_container(path, named: dict[str, np.ndarray]) -> None:
    save(path, np.zeros(0, dtype=np.float32), named)


def load_container(path) -> dict[str, np.ndarray]:
    _, named = load(path)
    if named is None:
        raise TensorFileError(f"{path}: no manifest present")
    return named
