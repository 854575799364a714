"""K-means reduction of a path ensemble to a handful of weighted scenarios.

Plain Euclidean K-means over whole-path vectors, written out here so the
cluster counts stay exact: each scenario probability is the rational
count / n_samp, and their sum is 1 by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arimax import PathEnsemble

N_RESTARTS = 10
MAX_ITER = 300


@dataclass
class ClusteredScenarios:
    centroids: np.ndarray       # (n_clust, horizon)
    probabilities: np.ndarray   # counts / n_samp, sums to 1 exactly
    counts: np.ndarray          # integer members per cluster
    n_samp: int
    inertia: float

    def __post_init__(self) -> None:
        self.centroids = np.asarray(self.centroids, dtype=float)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        self.counts = np.asarray(self.counts, dtype=int)
        if int(self.counts.sum()) != self.n_samp:
            raise ValueError("cluster counts do not add up to the sample size")


def _kpp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points coincide with a centroid
            centroids[i:] = x[int(rng.integers(n))]
            return centroids
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centroids[i] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centroids[i]) ** 2, axis=1))
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray
           ) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    labels = np.zeros(len(x), dtype=int)
    for _ in range(MAX_ITER):
        d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        for c in range(k):
            members = x[new_labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                # revive an empty cluster at the worst-represented point
                worst = int(np.argmax(d2[np.arange(len(x)), new_labels]))
                centroids[c] = x[worst]
                new_labels[worst] = c
                d2[worst, :] = 0.0  # keep a second empty cluster off this point
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return centroids, labels, inertia


def kmeans_cluster(ensemble: PathEnsemble, n_clust: int, seed: int
                   ) -> ClusteredScenarios:
    """Cluster paths, keeping the best of several k-means++ restarts.

    Deterministic for a fixed seed.  Returned clusters are ordered by
    descending member count (ties by centroid values) so downstream output
    is stable.
    """
    if n_clust < 1:
        raise ValueError(f"n_clust must be at least 1, got {n_clust}")
    x = ensemble.paths
    n = x.shape[0]
    if n < n_clust:
        raise ValueError(f"cannot form {n_clust} clusters from {n} paths")
    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    for _ in range(N_RESTARTS):
        centroids = _kpp_init(x, n_clust, rng)
        centroids, labels, inertia = _lloyd(x, centroids.copy())
        if best is None or inertia < best[2]:
            best = (centroids, labels, inertia)
    centroids, labels, inertia = best
    counts = np.bincount(labels, minlength=n_clust)
    order = np.lexsort(tuple(centroids.T[::-1]) + (-counts,))
    centroids = centroids[order]
    counts = counts[order]
    probabilities = counts / n
    return ClusteredScenarios(centroids, probabilities, counts, n, inertia)
