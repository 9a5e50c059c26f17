"""SGT tensor files and SGTC checkpoint containers.

SGT layout: magic ``SGT1`` | rank u8 | dims rank*u32le | payload
count*f64le | crc32(payload) u32le.  Bit-exact round trip; corruption is
caught by length checks and the trailing CRC.

A checkpoint container (``SGTC``) is a sequence of named SGT blobs:
magic ``SGTC`` | count u32le | per entry: name-length u16le, name utf-8,
embedded SGT bytes.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SGT1"
MAGIC_CONTAINER = b"SGTC"


class SgtFormatError(ValueError):
    """Raised on malformed SGT data (bad magic, rank, size, or CRC)."""


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    # ascontiguousarray promotes 0-d arrays to 1-d; restore the true shape
    arr = np.ascontiguousarray(arr).reshape(arr.shape)
    if arr.ndim > 255:
        raise SgtFormatError(f"rank {arr.ndim} exceeds format limit 255")
    header = MAGIC + struct.pack("<B", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f8").tobytes()
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 5 or blob[:4] != MAGIC:
        raise SgtFormatError("bad magic: not an SGT tensor")
    rank = blob[4]
    dim_end = 5 + 4 * rank
    if len(blob) < dim_end:
        raise SgtFormatError("truncated header")
    dims = struct.unpack(f"<{rank}I", blob[5:dim_end]) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = dim_end + 8 * count + 4
    if len(blob) != expected:
        raise SgtFormatError(f"size mismatch: expected {expected} bytes, got {len(blob)}")
    payload = blob[dim_end:dim_end + 8 * count]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise SgtFormatError("payload CRC mismatch")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def write_sgt(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(np.asarray(arr)))


def read_sgt(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def write_checkpoint(path, named_tensors: dict[str, np.ndarray]) -> None:
    out = [MAGIC_CONTAINER, struct.pack("<I", len(named_tensors))]
    for name, arr in named_tensors.items():
        enc = name.encode("utf-8")
        out.append(struct.pack("<H", len(enc)))
        out.append(enc)
        out.append(tensor_to_bytes(arr))
    Path(path).write_bytes(b"".join(out))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC_CONTAINER:
        raise SgtFormatError("bad magic: not an SGTC checkpoint")
    (count,) = struct.unpack("<I", blob[4:8])
    pos = 8
    result: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", blob[pos:pos + 2])
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        # embedded SGT: parse header to learn the blob length
        if blob[pos:pos + 4] != MAGIC:
            raise SgtFormatError(f"entry {name!r}: bad embedded tensor magic")
        rank = blob[pos + 4]
        dims = struct.unpack(f"<{rank}I", blob[pos + 5:pos + 5 + 4 * rank]) if rank else ()
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        size = 5 + 4 * rank + 8 * n + 4
        result[name] = tensor_from_bytes(blob[pos:pos + size])
        pos += size
    if pos != len(blob):
        raise SgtFormatError("trailing bytes after last checkpoint entry")
    return result
