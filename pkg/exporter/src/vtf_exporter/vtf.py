"""Minimal writer for the VTF1 feature container.

This mirrors the documented wire format of the feature toolkit (its external
interface): magic "VTF1", u32 version, u64 frames, u64 dim, u32 hop in
microseconds, then frames*dim little-endian float32, row major.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VTF1"
VERSION = 1
_HEADER = struct.Struct("<4sIQQI")


def write_vtf(path, frames: np.ndarray, hop_ms: float) -> None:
    arr = np.ascontiguousarray(frames, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"features must be (frames >= 1, dim >= 1), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("features contain NaN or Inf values")
    hop_us = int(round(hop_ms * 1000.0))
    if hop_us <= 0:
        raise ValueError(f"hop_ms must be positive, got {hop_ms}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1], hop_us))
        fh.write(arr.tobytes())
