"""K-means and DBSCAN baselines on plain feature vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.cluster import DBSCAN

from .mfm import canonical_labels


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    trace: list  # objective after each assignment step of the winning run


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def _lloyd(X, C, max_iter):
    trace = []
    labels = None
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        new_labels = D.argmin(axis=1)
        trace.append(float(D[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        C = C.copy()
        for c in range(C.shape[0]):
            members = labels == c
            if members.any():
                C[c] = X[members].mean(axis=0)
            else:
                # park an empty center on the worst-served point
                far = D[np.arange(X.shape[0]), labels].argmax()
                C[c] = X[far]
    D = _sq_dists(X, C)
    labels = D.argmin(axis=1)
    inertia = float(D[np.arange(X.shape[0]), labels].sum())
    if inertia < trace[-1]:
        trace.append(inertia)
    return labels, C, inertia, trace


def kmeans_fit(vectors, k: int, seed, n_init: int = 20, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds, best of ``n_init`` restarts."""
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of vectors n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        C0 = _kmeanspp(X, k, rng)
        labels, C, inertia, trace = _lloyd(X, C0, max_iter)
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, C, inertia, trace)
    return best


def kmeans(vectors, k: int, seed, n_init: int = 20) -> np.ndarray:
    """0-based k-means labels, canonicalised by first appearance."""
    res = kmeans_fit(vectors, k, seed, n_init=n_init)
    return canonical_labels(res.labels)[0]


def dbscan(vectors, eps: float, min_pts: int = 5) -> np.ndarray:
    """DBSCAN with Euclidean distance; noise points become singletons.

    ``min_pts`` counts the point itself, as in most reference
    implementations.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    raw = DBSCAN(eps=eps, min_samples=min_pts, metric="euclidean").fit(X).labels_
    labels = raw.copy()
    noise = np.nonzero(raw < 0)[0]
    next_label = raw.max() + 1 if (raw >= 0).any() else 0
    labels[noise] = next_label + np.arange(noise.size)
    return canonical_labels(labels)[0]
