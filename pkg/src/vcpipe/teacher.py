"""kNN teacher: per-speaker matching pools and pseudo-parallel conversion.

Each source frame is replaced by the unweighted mean of its k most similar
frames from one pool speaker, which renders the source content with that
speaker's timbre. Search is exact brute force over the whole per-speaker
store (ranked by cosine similarity by default, squared Euclidean behind a
switch), computed with a blocked vectorized kernel; ties rank the lower pool
frame index first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMatrix

SIMILARITIES = ("cosine", "sq_euclidean")

# cap on float64 elements materialized per similarity block
_BLOCK_BUDGET = 1 << 22


@dataclass(frozen=True)
class MatchingPool:
    """Per-speaker frame stores supporting exact k-nearest-neighbor queries."""

    speakers: dict[str, np.ndarray]  # speaker id -> (frames, dim) float32
    k: int = 8
    similarity: str = "cosine"
    speaker_order: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if not self.speakers:
            raise ValueError("matching pool has no speakers")
        order = self.speaker_order or tuple(self.speakers)
        if set(order) != set(self.speakers):
            raise ValueError("speaker_order does not match the speaker set")
        dims = {frames.shape[1] for frames in self.speakers.values()}
        if len(dims) != 1:
            raise ValueError(f"pool speakers disagree on dim: {sorted(dims)}")
        for sid, frames in self.speakers.items():
            if frames.shape[0] < self.k:
                raise ValueError(
                    f"speaker {sid!r} has {frames.shape[0]} frames, fewer than k={self.k}"
                )
        object.__setattr__(self, "speaker_order", order)

    @property
    def dim(self) -> int:
        return next(iter(self.speakers.values())).shape[1]


def build_pool(entries, k: int = 8, similarity: str = "cosine") -> MatchingPool:
    """Assemble a pool from (speaker-id, FeatureMatrix) entries.

    Entries sharing a speaker id are concatenated in order of appearance, so
    duplicates merge rather than error.
    """
    stores: dict[str, list[np.ndarray]] = {}
    order: list[str] = []
    for sid, m in entries:
        sid = str(sid)
        if sid not in stores:
            stores[sid] = []
            order.append(sid)
        stores[sid].append(m.data)
    speakers = {sid: np.ascontiguousarray(np.vstack(parts), dtype=np.float32)
                for sid, parts in stores.items()}
    return MatchingPool(speakers=speakers, k=k, similarity=similarity,
                        speaker_order=tuple(order))


def _topk_rows(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k column indices per row, ordered by score descending with ties
    going to the lower index (same result as a full stable descending sort,
    but via argpartition plus an exact tie repair, which is much cheaper).
    """
    rows, n = scores.shape
    if k >= n:
        return np.argsort(-scores, axis=1, kind="stable")[:, :k]
    part = np.argpartition(-scores, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(scores, part, axis=1).min(axis=1)
    # exact selection: everything strictly above the k-th value, then the
    # lowest-index entries equal to it
    strict = scores > kth[:, None]
    equal = scores == kth[:, None]
    need = (k - strict.sum(axis=1))[:, None]
    chosen = strict | (equal & (np.cumsum(equal, axis=1) <= need))
    idx = np.nonzero(chosen)[1].reshape(rows, k)  # ascending index per row
    vals = np.take_along_axis(scores, idx, axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1)


def knn_convert(pool: MatchingPool, speaker: str, source: FeatureMatrix) -> FeatureMatrix:
    """Convert a source utterance into the chosen pool speaker's timbre.

    Output frame t is the unweighted mean of the k pool frames most similar
    to source frame t; the output length always equals the source length.
    """
    if speaker not in pool.speakers:
        raise ValueError(f"unknown speaker {speaker!r}")
    frames = pool.speakers[speaker]
    if source.dim != frames.shape[1]:
        raise ValueError(f"source dim {source.dim} does not match pool dim {frames.shape[1]}")
    query = source.data.astype(np.float64)
    out = np.empty((source.frames, source.dim), dtype=np.float32)

    if pool.similarity == "cosine":
        step = max(1, _BLOCK_BUDGET // frames.shape[0])
        pool64 = frames.astype(np.float64)
        pool_norms = np.linalg.norm(pool64, axis=1)
        if np.any(pool_norms == 0.0):
            raise ValueError(f"speaker {speaker!r} pool contains zero-norm frames")
        query_norms = np.linalg.norm(query, axis=1)
        if np.any(query_norms == 0.0):
            raise ValueError("source contains zero-norm frames, cosine undefined")
        pool_unit = pool64 / pool_norms[:, None]
        query_unit = query / query_norms[:, None]
        for lo in range(0, source.frames, step):
            hi = min(lo + step, source.frames)
            sims = query_unit[lo:hi] @ pool_unit.T
            idx = _topk_rows(sims, pool.k)
            out[lo:hi] = frames[idx].mean(axis=1)
    else:
        pool64 = frames.astype(np.float64)
        step = max(1, _BLOCK_BUDGET // (frames.shape[0] * frames.shape[1]))
        for lo in range(0, source.frames, step):
            hi = min(lo + step, source.frames)
            d2 = ((query[lo:hi, None, :] - pool64[None, :, :]) ** 2).sum(axis=-1)
            idx = _topk_rows(-d2, pool.k)
            out[lo:hi] = frames[idx].mean(axis=1)

    return FeatureMatrix(data=out, hop_ms=source.hop_ms)


def sample_speaker(pool: MatchingPool, rng: np.random.Generator) -> str:
    """Uniformly random speaker id; advances the generator deterministically."""
    return pool.speaker_order[int(rng.integers(len(pool.speaker_order)))]
