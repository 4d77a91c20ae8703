"""Seeded, deterministic K-means (Lloyd iterations, k-means++ init).

Distances are squared Euclidean; on unit-norm inputs this is order-equivalent
to cosine distance. Ties in the assignment step go to the lowest cluster
index, so single- and multi-threaded BLAS backends agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet
from .prototypes import PrototypeBank


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray  # k x d, float64
    assignments: np.ndarray  # n ints in [0, k)
    inertia: float
    iterations_run: int


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2; tiny negatives from rounding are clipped.
    d2 = (
        np.einsum("ij,ij->i", x, x)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: per step, try a few D^2-weighted candidates and keep
    the one that minimizes the resulting potential."""
    n = x.shape[0]
    trials = 2 + int(np.log(k))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = _sq_distances(x, x[chosen[:1]])[:, 0]
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass sits on already-chosen points (duplicates):
            # fall back to the lowest untaken index.
            idx = int(np.flatnonzero(~taken)[0])
        else:
            candidates = rng.choice(n, size=trials, p=d2 / total)
            best_idx, best_d2, best_pot = -1, None, np.inf
            for cand in candidates:
                cand_d2 = np.minimum(d2, _sq_distances(x, x[cand : cand + 1])[:, 0])
                pot = cand_d2.sum()
                if pot < best_pot:
                    best_idx, best_d2, best_pot = int(cand), cand_d2, pot
            idx = best_idx
            d2 = best_d2
        chosen[j] = idx
        taken[idx] = True
        if total <= 0.0:
            d2 = np.minimum(d2, _sq_distances(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def _fix_empty_clusters(assign, d2, sizes, k):
    """Move the farthest point of the largest cluster into each empty one."""
    for empty in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))
        members = np.flatnonzero(assign == donor)
        far = members[int(np.argmax(d2[members, donor]))]
        assign[far] = empty
        sizes[donor] -= 1
        sizes[empty] += 1


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int, tol: float):
    centroids = _kmeanspp_init(x, k, rng)
    n = x.shape[0]
    prev_inertia = np.inf
    assign = np.zeros(n, dtype=np.int64)
    inertia = 0.0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = _sq_distances(x, centroids)
        assign = np.argmin(d2, axis=1)
        sizes = np.bincount(assign, minlength=k)
        if (sizes == 0).any():
            _fix_empty_clusters(assign, d2, sizes, k)
        for c in range(k):
            centroids[c] = x[assign == c].mean(axis=0)
        inertia = float(((x - centroids[assign]) ** 2).sum())
        assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(prev_inertia)), (
            f"inertia increased: {prev_inertia} -> {inertia}"
        )
        if prev_inertia - inertia < tol:
            break
        prev_inertia = inertia
    return KMeansResult(centroids, assign, inertia, iterations)


def kmeans_fit(
    points: EmbeddingSet,
    k: int,
    seed,
    max_iter: int = 300,
    tol: float = 1e-6,
    n_init: int = 10,
) -> KMeansResult:
    """Cluster `points` into k groups; deterministic for a fixed seed.

    Runs `n_init` independent k-means++ starts from one seeded generator and
    keeps the lowest-inertia result. Each run stops when the absolute inertia
    improvement drops below `tol` or after `max_iter` Lloyd iterations. The
    returned result never has an empty cluster: empty clusters are repaired
    by reassigning the farthest point of the largest cluster.
    """
    n = points.count
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds sample count n={n}")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    x = points.vectors.astype(np.float64)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = _lloyd(x, k, rng, max_iter, tol)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def normalize_centroids(result: KMeansResult, kind: str = "target") -> PrototypeBank:
    """Project centroids onto the unit sphere and stack them as bank columns."""
    norms = np.linalg.norm(result.centroids, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ValueError(f"zero-norm centroid for cluster {int(bad[0])}")
    return PrototypeBank((result.centroids / norms[:, None]).T, kind=kind)
