"""Deterministic K-means over patch embeddings, emitting per-cluster binary masks.

Lloyd's algorithm with seeded k-means++ initialization. The exact procedure,
which independent reimplementations must follow to reproduce assignments:

1. ``rng = numpy.random.default_rng(seed)``.
2. First center: index ``rng.integers(n)``.
3. Each further center: let ``d2[j]`` be the squared distance of point j to
   its nearest chosen center; draw ``r = rng.random() * d2.sum()`` and pick
   the smallest index whose cumulative ``d2`` strictly exceeds r. If all
   distances are zero, pick index ``rng.integers(n)``.
4. Lloyd iterations until the assignment stops changing, at most 300:
   nearest centroid by squared Euclidean distance (ties to the lowest
   cluster index), centroids updated to the mean of their points. An empty
   cluster is re-seeded, in ascending cluster order, to the point farthest
   from its stale centroid (ties to the lowest point index).

By default feature rows are L2-normalized first so Euclidean ordering matches
cosine; rows with zero norm are left at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import ClusterMask

MAX_ITERATIONS = 300


@dataclass(frozen=True)
class ClusterSet:
    """K-means result over the N patch positions."""

    k: int
    assignment: np.ndarray  # (N,) int cluster indices
    centroids: np.ndarray  # (K, f)
    objective: float  # within-cluster sum of squared distances
    seed: int
    normalized: bool
    objective_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def mask(self, k: int) -> ClusterMask:
        return ClusterMask(bits=self.assignment == k)


def cluster_masks(clusters: ClusterSet) -> list[ClusterMask]:
    """One binary mask per cluster; together they partition the patch set."""
    return [clusters.mask(k) for k in range(clusters.k)]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms != 0.0)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=-1)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = _sq_dists(points, points[chosen]).min(axis=1)
        cum = np.cumsum(d2)
        if cum[-1] == 0.0:
            chosen.append(int(rng.integers(n)))
            continue
        r = rng.random() * cum[-1]
        chosen.append(min(int(np.searchsorted(cum, r, side="right")), n - 1))
    return points[chosen].copy()


def kmeans(features: np.ndarray, k: int, seed: int, *, normalize: bool = True) -> ClusterSet:
    """Cluster N feature rows into k groups, deterministically for fixed inputs."""
    points = np.asarray(features, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("features must be a 2-D (points, dims) array")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must satisfy 1 <= k <= {n}")
    if not np.isfinite(points).all():
        raise ValueError("features contain non-finite values")
    if normalize:
        points = _normalize_rows(points)

    rng = np.random.default_rng(seed)
    centers = _plusplus_init(points, k, rng)
    assignment = _sq_dists(points, centers).argmin(axis=1)  # argmin ties -> lowest index
    history = [_wcss(points, centers, assignment)]

    for _ in range(MAX_ITERATIONS):
        centers = _update_centers(points, centers, assignment, k)
        new_assignment = _sq_dists(points, centers).argmin(axis=1)
        obj = _wcss(points, centers, new_assignment)
        assert obj <= history[-1] * (1.0 + 1e-12) + 1e-12, "objective increased"
        history.append(obj)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment

    return ClusterSet(
        k=k,
        assignment=assignment.astype(np.int64),
        centroids=centers,
        objective=_wcss(points, centers, assignment),
        seed=seed,
        normalized=normalize,
        objective_history=tuple(history),
    )


def _update_centers(points: np.ndarray, centers: np.ndarray, assignment: np.ndarray, k: int) -> np.ndarray:
    new = centers.copy()
    counts = np.bincount(assignment, minlength=k)
    for j in range(k):
        if counts[j] > 0:
            new[j] = points[assignment == j].mean(axis=0)
        else:
            # re-seed to the point farthest from the stale centroid
            d2 = _sq_dists(points, centers[j : j + 1])[:, 0]
            new[j] = points[int(d2.argmax())]
    return new


def _wcss(points: np.ndarray, centers: np.ndarray, assignment: np.ndarray) -> float:
    diff = points - centers[assignment]
    return float(np.einsum("nf,nf->", diff, diff))
