"""Writer for the VEM1 matrix container.

Byte layout: bytes 0-3 ASCII "VEM1"; byte 4 dtype code (0 = float32,
1 = float64); byte 5 rank (always 2); bytes 6-7 reserved zero; bytes 8-15
row count as u64 little-endian; bytes 16-23 column count as u64
little-endian; then the row-major little-endian payload.
"""

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"VEM1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_matrix(m, path):
    """Write a 2-D float array; float32 stays float32, everything else f64."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"need a 2-D matrix, got shape {m.shape}")
    code = 0 if m.dtype == np.float32 else 1
    payload = np.ascontiguousarray(m, dtype=_CODES[code])
    header = _MAGIC + bytes([code, 2, 0, 0]) + struct.pack(
        "<QQ", m.shape[0], m.shape[1]
    )
    Path(path).write_bytes(header + payload.tobytes(order="C"))
