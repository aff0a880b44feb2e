"""Feature matrices and their binary on-disk containers.

A FeatureMatrix is a time-major sequence of fixed-width float32 frames,
one frame per hop (an SSL feature dump of a single utterance). Two
little-endian container formats are defined here:

    VTF1 (features)   magic "VTF1" | u32 version | u64 frames | u64 dim |
                      u32 hop_us | frames*dim float32, row major
    VTC1 (codebooks)  magic "VTC1" | u32 version | u64 num_centroids |
                      u64 dim | u64 seed | f64 distortion | K*dim float32

The hop is stored as integer microseconds so headers stay bit-stable, and
payloads are float32 regardless of in-memory precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"VTF1"
CODEBOOK_MAGIC = b"VTC1"
FORMAT_VERSION = 1

_FEATURE_HEADER = struct.Struct("<4sIQQI")
_CODEBOOK_HEADER = struct.Struct("<4sIQQQd")


class FormatError(ValueError):
    """A container file violates the VTF/VTC layout."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """frames x dim float32 matrix with a fixed frame hop in milliseconds.

    Immutable after construction: the array is made contiguous, cast to
    float32 and marked read-only, so instances can be shared freely.
    """

    data: np.ndarray
    hop_ms: float = 20.0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D (frames, dim) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"need at least one frame and one channel, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("feature matrix contains NaN or Inf values")
        if not self.hop_ms > 0:
            raise ValueError(f"hop_ms must be positive, got {self.hop_ms}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.frames * self.hop_ms / 1000.0

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.hop_ms == other.hop_ms and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class CodebookFile:
    """Persisted codebook: centroid payload plus fit metadata."""

    centroids: np.ndarray  # (num_centroids, dim) float32
    distortion: float  # final mean squared quantization error on the fit set
    seed: int  # RNG seed used at fit time

    def __post_init__(self):
        arr = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"centroids must be (num_centroids >= 1, dim >= 1), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("codebook contains NaN or Inf centroids")
        if not self.distortion >= 0:
            raise ValueError(f"distortion must be >= 0, got {self.distortion}")
        arr.setflags(write=False)
        object.__setattr__(self, "centroids", arr)

    @property
    def num_centroids(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def hop_ms_to_us(hop_ms: float) -> int:
    return int(round(hop_ms * 1000.0))


def prompt_length_frames(prompt_seconds: float, hop_ms: float) -> int:
    """Frames covered by a prompt of the given duration (3.0 s at 20 ms -> 150)."""
    return int(round(prompt_seconds * 1000.0 / hop_ms))


def write_features(m: FeatureMatrix, path) -> None:
    """Serialize a feature matrix to the VTF1 container."""
    header = _FEATURE_HEADER.pack(
        FEATURE_MAGIC, FORMAT_VERSION, m.frames, m.dim, hop_ms_to_us(m.hop_ms)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.data.tobytes())


def read_features(path) -> FeatureMatrix:
    """Parse a VTF1 container, validating magic, version, payload size and finiteness."""
    raw = Path(path).read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the VTF1 header")
    magic, version, frames, dim, hop_us = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    if frames < 1 or dim < 1:
        raise FormatError(f"{path}: header declares empty matrix ({frames} x {dim})")
    if hop_us == 0:
        raise FormatError(f"{path}: header declares zero hop")
    expected = frames * dim * 4
    payload = raw[_FEATURE_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedError(
            f"{path}: payload has {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(frames, dim)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{path}: payload contains NaN or Inf values")
    return FeatureMatrix(data=data, hop_ms=hop_us / 1000.0)


def slice_frames(m: FeatureMatrix, start: int, length: int) -> FeatureMatrix:
    """Contiguous copy of rows [start, start+length); never aliases the source."""
    if length < 1:
        raise ValueError(f"slice length must be >= 1, got {length}")
    if start < 0 or start + length > m.frames:
        raise ValueError(
            f"slice [{start}, {start + length}) out of range for {m.frames} frames"
        )
    return FeatureMatrix(data=m.data[start : start + length].copy(), hop_ms=m.hop_ms)


def concat_frames(a: FeatureMatrix, b: FeatureMatrix) -> FeatureMatrix:
    """Concatenate two matrices along time (prompt-prepending helper)."""
    if a.dim != b.dim:
        raise ValueError(f"dim mismatch: {a.dim} vs {b.dim}")
    if a.hop_ms != b.hop_ms:
        raise ValueError(f"hop mismatch: {a.hop_ms} vs {b.hop_ms}")
    return FeatureMatrix(data=np.vstack([a.data, b.data]), hop_ms=a.hop_ms)


def write_codebook_file(cb: CodebookFile, path) -> None:
    header = _CODEBOOK_HEADER.pack(
        CODEBOOK_MAGIC, FORMAT_VERSION, cb.num_centroids, cb.dim, cb.seed, cb.distortion
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(cb.centroids.tobytes())


def read_codebook_file(path) -> CodebookFile:
    raw = Path(path).read_bytes()
    if len(raw) < _CODEBOOK_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the VTC1 header")
    magic, version, num, dim, seed, distortion = _CODEBOOK_HEADER.unpack_from(raw)
    if magic != CODEBOOK_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {CODEBOOK_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported format version {version}")
    if num < 1 or dim < 1:
        raise FormatError(f"{path}: header declares empty codebook ({num} x {dim})")
    expected = num * dim * 4
    payload = raw[_CODEBOOK_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedError(
            f"{path}: payload has {len(payload)} bytes, header promises {expected}"
        )
    centroids = np.frombuffer(payload, dtype="<f4").reshape(num, dim)
    if not np.isfinite(centroids).all():
        raise NonFiniteError(f"{path}: payload contains NaN or Inf values")
    return CodebookFile(centroids=centroids, distortion=distortion, seed=seed)
