"""Independent oracles used across the test suite.

These deliberately take the slow, obvious path (per-point scans, exhaustive
enumeration, central finite differences) so they stay independent of the
vectorized kernels they check.
"""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_assign(points, centroids):
    """Per-point scan over all centroids; ties to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    ids = []
    for p in points:
        best_id, best_d2 = 0, np.inf
        for j, c in enumerate(centroids):
            d2 = ((p - c) ** 2).sum()
            if d2 < best_d2:
                best_id, best_d2 = j, d2
        ids.append(best_id)
    return np.array(ids, dtype=np.int64)


def best_two_partition(points):
    """Exhaustive optimum over all 2-partitions of a small point set.

    Returns (centroids sorted lexicographically, mean squared distortion).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    best = None
    for bits in itertools.product([0, 1], repeat=n):
        groups = [points[[i for i in range(n) if bits[i] == g]] for g in (0, 1)]
        if any(len(g) == 0 for g in groups):
            continue
        cents = np.array([g.mean(axis=0) for g in groups])
        d2 = sum(((g - c) ** 2).sum() for g, c in zip(groups, cents)) / n
        if best is None or d2 < best[1]:
            best = (cents[np.lexsort(cents.T[::-1])], d2)
    return best


def knn_oracle_frame(pool_frames, query, k, similarity="cosine"):
    """Score every pool frame for one query, rank with a stable sort, mean top k."""
    query = np.asarray(query, dtype=np.float64)
    scores = []
    for row in pool_frames:
        row = row.astype(np.float64)
        if similarity == "cosine":
            scores.append(float(row @ query) /
                          (float(np.linalg.norm(row)) * float(np.linalg.norm(query))))
        else:
            scores.append(-float(((row - query) ** 2).sum()))
    order = np.argsort(-np.asarray(scores), kind="stable")[:k]
    return pool_frames[order].mean(axis=0), order


def knn_oracle(pool_frames, queries, k, similarity="cosine"):
    return np.stack([knn_oracle_frame(pool_frames, q, k, similarity)[0]
                     for q in queries])


def two_stage_oracle(x, content_centroids, residual_centroids):
    """Independent per-frame nearest-centroid scans for both decoupler stages."""
    x = np.asarray(x, dtype=np.float64)
    ids1 = brute_force_assign(x, content_centroids)
    c1 = np.asarray(content_centroids, dtype=np.float64)[ids1]
    residual = x - c1
    ids2 = brute_force_assign(residual, residual_centroids)
    c2 = np.asarray(residual_centroids, dtype=np.float64)[ids2]
    return c1 + c2, ids1, ids2


def fd_gradient(fn, x, step=1e-4):
    """Central finite differences of a scalar function over every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        grad[idx] = (fn(xp) - fn(xm)) / (2.0 * step)
    return grad


def max_rel_error(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def assignment_histogram(ids, k):
    counts = np.zeros(k, dtype=np.int64)
    for t in ids:
        counts[int(t)] += 1
    return counts
