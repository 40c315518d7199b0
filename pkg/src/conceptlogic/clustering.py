"""K-means with farthest-point seeding and elbow-based selection of k.

Used to collapse embedded motion patterns of one body part into a compact set
of canonical concepts; the most frequent pattern of each cluster names it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim == 1:
            vectors = vectors[:, None]
        if vectors.ndim != 2:
            raise ValueError("embedding vectors must share one dimension")
        if not np.isfinite(vectors).all():
            raise ValueError("embedding vectors must be finite")
        labels = tuple(self.labels) if len(self.labels) else tuple(str(i) for i in range(len(vectors)))
        if len(labels) != len(vectors):
            raise ValueError(f"{len(labels)} labels for {len(vectors)} vectors")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    representatives: list[str]
    n_iter: int
    sse_history: list[float]


def _as_embeddings(embeddings) -> EmbeddingSet:
    return embeddings if isinstance(embeddings, EmbeddingSet) else EmbeddingSet(embeddings)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)
    return d


def _farthest_point_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(X)))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(closest))  # first index on ties
        chosen.append(nxt)
        closest = np.minimum(closest, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans_cluster(embeddings, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from farthest-point seeds until assignments are stable."""
    emb = _as_embeddings(embeddings)
    X = emb.vectors
    n = len(X)
    if n == 0:
        raise ValueError("cannot cluster an empty embedding set")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of vectors ({n})")

    rng = np.random.default_rng(seed)
    centroids = _farthest_point_init(X, k, rng)
    assignments = np.full(n, -1)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = np.argmin(_sq_dists(X, centroids), axis=1)
        if n_iter > 1 and np.array_equal(new, assignments):
            break
        assignments = new
        for j in range(k):
            members = assignments == j
            if not members.any():
                # reseed with the point lying farthest from its own centroid
                own = ((X - centroids[assignments]) ** 2).sum(axis=1)
                far = int(np.argmax(own))
                assignments[far] = j
                members = assignments == j
            centroids[j] = X[members].mean(axis=0)
        # a reseed can empty a donor cluster; recompute all means once more
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[j] = X[members].mean(axis=0)
        history.append(float(((X - centroids[assignments]) ** 2).sum()))

    sse = float(((X - centroids[assignments]) ** 2).sum())
    reps = []
    for j in range(k):
        labels = [emb.labels[i] for i in np.flatnonzero(assignments == j)]
        reps.append(Counter(labels).most_common(1)[0][0] if labels else "")
    return KMeansResult(assignments, centroids, sse, reps, n_iter, history)


def sse_curve(embeddings, k_max: int, seed: int = 0) -> np.ndarray:
    """SSE for k = 1..k_max (index 0 holds k=1)."""
    emb = _as_embeddings(embeddings)
    return np.array([kmeans_cluster(emb, k, seed).sse for k in range(1, k_max + 1)])


def elbow_select_k(embeddings, k_max: int, seed: int = 0) -> int:
    """The k in [2, k_max-1] with the largest second difference of SSE.

    Ties go to the smaller k.
    """
    emb = _as_embeddings(embeddings)
    if k_max < 3:
        raise ValueError("k_max must be >= 3 to evaluate a second difference")
    if k_max > len(emb):
        raise ValueError(f"k_max={k_max} exceeds the number of vectors ({len(emb)})")
    sse = sse_curve(emb, k_max, seed)
    # second[k-2] corresponds to k = 2..k_max-1
    second = sse[:-2] - 2.0 * sse[1:-1] + sse[2:]
    return int(np.argmax(second)) + 2


class ElbowKMeans(ClusterMixin, BaseEstimator):
    """K-means whose k is chosen by the elbow rule when ``n_clusters`` is None.

    Parameters
    ----------
    n_clusters : int or None
        Fixed cluster count; ``None`` selects it with :func:`elbow_select_k`.
    k_max : int
        Largest k considered by the elbow rule.
    random_state : int
        Seed for the first farthest-point center.
    """

    def __init__(self, n_clusters: int | None = None, k_max: int = 8, random_state: int = 0):
        self.n_clusters = n_clusters
        self.k_max = k_max
        self.random_state = random_state

    def fit(self, X, y=None, labels: Sequence[str] | None = None):
        X = check_array(X, dtype=np.float64)
        emb = EmbeddingSet(X, tuple(labels) if labels is not None else ())
        k = self.n_clusters
        if k is None:
            k = elbow_select_k(emb, min(self.k_max, len(emb)), self.random_state)
        result = kmeans_cluster(emb, k, self.random_state)
        self.n_clusters_ = k
        self.cluster_centers_ = result.centroids
        self.labels_ = result.assignments
        self.inertia_ = result.sse
        self.representatives_ = result.representatives
        self.n_iter_ = result.n_iter
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.argmin(_sq_dists(X, self.cluster_centers_), axis=1)
