"""Lloyd K-Means with k-means++ seeding and a strict determinism contract.

All geometry is squared Euclidean in float64. Assignments break ties toward
the lowest centroid index, distances are computed in blocks with the plain
difference form (so a per-point scan reproduces them bit for bit), and the
same (points, k, config) always yields a bit-identical codebook.

Pinned centroids: callers may pass fixed centroid rows that occupy the first
slots of the codebook. They take part in assignment but are held fixed during
the Lloyd update, which keeps quantities anchored to them (for example a zero
centroid in a residual quantizer) exactly valid after any number of
iterations.

Empty clusters are re-seeded at the currently worst-quantized points, which
never increases distortion, so the recorded distortion trace is monotone
non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import CodebookFile, read_codebook_file, write_codebook_file

# cap on block * k * dim float64 elements per distance block
_BLOCK_BUDGET = 1 << 22


@dataclass(frozen=True)
class KMeansConfig:
    max_iters: int = 100
    tol: float = 1e-6  # relative distortion improvement threshold
    seed: int = 0
    pinned_centroids: np.ndarray | None = None  # (p, dim), held fixed during Lloyd


@dataclass(frozen=True)
class Codebook:
    """Fitted codebook: centroid rows plus the per-iteration distortion trace."""

    centroids: np.ndarray  # (k, dim) float64
    fit_distortion_trace: np.ndarray  # float64, one entry per assignment pass
    seed: int = 0

    def __post_init__(self):
        cents = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if cents.ndim != 2 or cents.shape[0] < 1 or cents.shape[1] < 1:
            raise ValueError(f"centroids must be (k >= 1, dim >= 1), got {cents.shape}")
        if not np.isfinite(cents).all():
            raise ValueError("codebook contains non-finite centroids")
        trace = np.asarray(self.fit_distortion_trace, dtype=np.float64)
        cents.setflags(write=False)
        object.__setattr__(self, "centroids", cents)
        object.__setattr__(self, "fit_distortion_trace", trace)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def distortion(self) -> float:
        return float(self.fit_distortion_trace[-1])


def _block_size(k: int, dim: int) -> int:
    return max(1, _BLOCK_BUDGET // max(1, k * dim))


def _assign_blocked(points: np.ndarray, centroids: np.ndarray):
    """Nearest-centroid ids and squared distances, blocked over points.

    Uses the difference form sum((x - c)^2, axis=-1), never the expanded
    dot-product form, so results match a per-point brute-force scan exactly.
    """
    n = points.shape[0]
    k, dim = centroids.shape
    ids = np.empty(n, dtype=np.int64)
    min_d2 = np.empty(n, dtype=np.float64)
    step = _block_size(k, dim)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        d2 = ((points[lo:hi, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
        idx = np.argmin(d2, axis=1)  # first occurrence wins ties
        ids[lo:hi] = idx
        min_d2[lo:hi] = d2[np.arange(hi - lo), idx]
    return ids, min_d2


def _init_kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator,
                   pinned: np.ndarray) -> np.ndarray:
    """k-means++ seeding; pinned rows occupy the leading slots as-is."""
    n, dim = points.shape
    centroids = np.empty((k, dim), dtype=np.float64)
    chosen = pinned.shape[0]
    if chosen:
        centroids[:chosen] = pinned
    else:
        centroids[0] = points[int(rng.integers(n))]
        chosen = 1
    _, d2 = _assign_blocked(points, centroids[:chosen])
    while chosen < k:
        total = float(d2.sum())
        if total > 0.0:
            # inverse-CDF sampling proportional to squared distance
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centroids[chosen] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[chosen]) ** 2).sum(axis=-1))
        chosen += 1
    return centroids


def _lloyd_update(points: np.ndarray, centroids: np.ndarray, ids: np.ndarray,
                  d2: np.ndarray, n_pinned: int) -> np.ndarray:
    k, dim = centroids.shape
    counts = np.bincount(ids, minlength=k)
    sums = np.zeros((k, dim), dtype=np.float64)
    np.add.at(sums, ids, points)
    new = centroids.copy()
    occupied = counts > 0
    movable = np.arange(k) >= n_pinned
    upd = occupied & movable
    new[upd] = sums[upd] / counts[upd, None]
    empty = np.flatnonzero(~occupied & movable)
    if empty.size:
        # deterministic re-seed: worst-quantized points, ties to lowest index
        worst = np.argsort(-d2, kind="stable")
        new[empty] = points[worst[: empty.size]]
    return new


def fit(points: np.ndarray, k: int, config: KMeansConfig = KMeansConfig()) -> Codebook:
    """Fit k centroids with Lloyd iterations after k-means++ seeding.

    Stops when the relative distortion improvement drops below config.tol or
    after config.max_iters update passes. The returned trace holds the mean
    squared quantization error after seeding and after every update.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {pts.shape}")
    n, dim = pts.shape
    if n == 0:
        raise ValueError("cannot fit a codebook on an empty point set")
    if not np.isfinite(pts).all():
        raise ValueError("points contain NaN or Inf values")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n_points, got k={k} with {n} points")
    if config.pinned_centroids is not None:
        pinned = np.ascontiguousarray(config.pinned_centroids, dtype=np.float64)
        if pinned.ndim != 2 or pinned.shape[1] != dim:
            raise ValueError(f"pinned centroids must be (p, {dim}), got {pinned.shape}")
        if pinned.shape[0] > k:
            raise ValueError(f"{pinned.shape[0]} pinned centroids exceed k={k}")
        if not np.isfinite(pinned).all():
            raise ValueError("pinned centroids contain non-finite values")
    else:
        pinned = np.empty((0, dim), dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    centroids = _init_kmeanspp(pts, k, rng, pinned)
    ids, d2 = _assign_blocked(pts, centroids)
    trace = [float(d2.mean())]
    for _ in range(config.max_iters):
        centroids = _lloyd_update(pts, centroids, ids, d2, pinned.shape[0])
        ids, d2 = _assign_blocked(pts, centroids)
        trace.append(float(d2.mean()))
        prev, cur = trace[-2], trace[-1]
        if prev == 0.0 or (prev - cur) < config.tol * prev:
            break
    return Codebook(centroids=centroids, fit_distortion_trace=np.array(trace),
                    seed=config.seed)


def assign(cb: Codebook, points: np.ndarray) -> np.ndarray:
    """Token id of the nearest centroid per point (ties to the lowest index)."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != cb.dim:
        raise ValueError(f"points must be (m, {cb.dim}), got shape {pts.shape}")
    ids, _ = _assign_blocked(pts, cb.centroids)
    return ids


def quantize(cb: Codebook, points: np.ndarray):
    """Centroid-substituted matrix plus token ids.

    Row i of the returned matrix is the centroid vector selected for point i,
    not the discrete index, so the output lives in feature space.
    """
    ids = assign(cb, points)
    return cb.centroids[ids].copy(), ids


def save_codebook(cb: Codebook, path) -> None:
    """Persist to VTC1 (float32 payload, final distortion only)."""
    write_codebook_file(
        CodebookFile(
            centroids=cb.centroids.astype(np.float32),
            distortion=cb.distortion,
            seed=cb.seed,
        ),
        path,
    )


def load_codebook(path) -> Codebook:
    cf = read_codebook_file(path)
    return Codebook(
        centroids=cf.centroids.astype(np.float64),
        fit_distortion_trace=np.array([cf.distortion]),
        seed=cf.seed,
    )
