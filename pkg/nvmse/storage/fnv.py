"""
FNV - 64-bit FNV-1a kernels used for page checksums and result digests
"""
from pathlib import Path
from typing import Union

import numba
import numpy as np

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

Buffer = Union[bytes, bytearray, memoryview, np.ndarray]


@numba.njit(cache=True, nogil=True)
def _fnv1a64(data, h):
    prime = np.uint64(FNV_PRIME)
    for i in range(data.shape[0]):
        h = (h ^ np.uint64(data[i])) * prime
    return h


def as_u8(buf: Buffer) -> np.ndarray:
    """View any contiguous buffer as a flat uint8 array without copying"""
    if isinstance(buf, np.ndarray):
        return buf.reshape(-1).view(np.uint8)
    return np.frombuffer(buf, dtype=np.uint8)


def fnv1a64(buf: Buffer, seed: int = FNV_OFFSET_BASIS) -> int:
    """FNV-1a 64 over buf; pass a previous result as seed to continue a stream"""
    data = as_u8(buf)
    if data.shape[0] == 0:
        return seed
    return int(_fnv1a64(data, np.uint64(seed)))


class StreamDigest:
    """Incremental FNV-1a 64 digest over a sequence of byte strings"""

    def __init__(self):
        self.value = FNV_OFFSET_BASIS
        self.chunks = 0

    def update(self, chunk: Buffer):
        self.value = fnv1a64(chunk, self.value)
        self.chunks += 1

    def hexdigest(self) -> str:
        return f"{self.value:016x}"


def file_digest(path: Path) -> str:
    """Whole-file FNV-1a 64 digest as 16 hex digits"""
    data = np.fromfile(path, dtype=np.uint8)
    return f"{fnv1a64(data):016x}"


# Compile once at import so the first timed page read does not pay for it
fnv1a64(b"\0")
