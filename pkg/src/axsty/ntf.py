"""Binary tensor fixture format NTF1.

Layout: magic bytes ``NTF1``, a little-endian u32 rank, rank u32 dims,
then the row-major payload as little-endian 32-bit floats. Used for
weights, injected backbone features, and golden outputs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NTF1"


class NtfFormatError(ValueError):
    """Malformed or truncated NTF1 payload."""


def write_ntf(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_ntf(path) -> np.ndarray:
    """Read an NTF1 file; the result is float32 with the declared shape."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise NtfFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise NtfFormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    header_end = 8 + 4 * rank
    if len(raw) < header_end:
        raise NtfFormatError(f"{path}: truncated dims for rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = raw[header_end:]
    if len(payload) != 4 * count:
        raise NtfFormatError(
            f"{path}: payload holds {len(payload) // 4} floats, shape {dims} needs {count}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
