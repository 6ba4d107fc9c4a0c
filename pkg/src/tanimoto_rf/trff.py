"""TRFF binary matrices: feature matrices and Gram matrices.

Layout (little endian)::

    b"TRFF" | u32 version | u64 n | u64 M | n*M float64, one column per data point

Bit 31 of the version word marks a Gram payload (then ``n == M``).
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TRFF"
VERSION = 1
GRAM_FLAG = 1 << 31
_HEADER = struct.Struct("<4sIQQ")


class TrffError(ValueError):
    pass


def write_trff(path, matrix: np.ndarray, gram: bool = False) -> None:
    """Write an ``M x n`` matrix (columns are data points)."""
    matrix = np.asarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    M, n = matrix.shape
    if gram and M != n:
        raise ValueError("a Gram payload must be square")
    version = VERSION | (GRAM_FLAG if gram else 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, version, n, M))
        fh.write(np.ascontiguousarray(matrix.T).tobytes())


def read_trff(path) -> tuple[np.ndarray, bool]:
    """Return ``(matrix, is_gram)`` with ``matrix`` of shape ``M x n``."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise TrffError("truncated header")
        magic, version, n, M = _HEADER.unpack(head)
        if magic != MAGIC:
            raise TrffError(f"bad magic {magic!r}")
        if version & ~GRAM_FLAG != VERSION:
            raise TrffError(f"unsupported version {version & ~GRAM_FLAG}")
        payload = fh.read()
    if len(payload) != 8 * n * M:
        raise TrffError(f"expected {8 * n * M} payload bytes, found {len(payload)}")
    cols = np.frombuffer(payload, dtype="<f8").reshape(n, M)
    return cols.T.astype(np.float64), bool(version & GRAM_FLAG)
