"""k-means on reduced coordinates, with k-means++ seeding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SEED = 0


@dataclass
class KMeansModel:
    """Cluster model; labels are 0-based internally (cluster ``l`` is reported as ``l + 1``)."""

    centroids: np.ndarray
    labels: np.ndarray
    inertia_history: list = field(default_factory=list)
    seed: int = DEFAULT_SEED
    iterations: int = 0

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def inertia(self):
        return self.inertia_history[-1]


def _sq_dists(X, C):
    # Direct differences rather than the expanded form: exact ties stay ties.
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(X, k, rng):
    T = X.shape[0]
    centroids = [X[rng.integers(T)]]
    d2 = _sq_dists(X, centroids[0][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(T)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, T - 1)
        centroids.append(X[idx])
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
    return np.array(centroids, dtype=float)


def _inertia(X, C, labels):
    return float(((X - C[labels]) ** 2).sum())


def _update(X, labels, k):
    """Centroid step; an empty cluster takes the point farthest from its centroid."""
    labels = labels.copy()
    C = np.zeros((k, X.shape[1]))
    counts = np.bincount(labels, minlength=k)
    for l in np.flatnonzero(counts):
        C[l] = X[labels == l].mean(axis=0)
    for l in np.flatnonzero(counts == 0):
        d = ((X - C[labels]) ** 2).sum(axis=1)
        d[counts[labels] < 2] = -1.0
        far = int(np.argmax(d))
        donor = labels[far]
        labels[far] = l
        counts[donor] -= 1
        counts[l] = 1
        C[l] = X[far]
        C[donor] = X[labels == donor].mean(axis=0)
    return C, labels


def _lloyd(X, C, max_iter):
    k = C.shape[0]
    rows = np.arange(X.shape[0])
    labels = np.argmin(_sq_dists(X, C), axis=1)
    history = [_inertia(X, C, labels)]
    it = 0
    for it in range(1, max_iter + 1):
        C, labels = _update(X, labels, k)
        history.append(_inertia(X, C, labels))
        d = _sq_dists(X, C)
        best = np.argmin(d, axis=1)
        # move a point only on strict improvement, so the inertia never rises
        new_labels = np.where(d[rows, best] < d[rows, labels], best, labels)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        history.append(_inertia(X, C, labels))
    return C, labels, history, it


def _hartigan(X, C, labels, history, max_passes=100):
    """Single-point moves that lower the inertia once both centroid shifts are counted.

    Lloyd stops as soon as every point sits at its nearest centroid; a move
    can still pay off when the donor cluster is small. Each accepted move
    lowers the inertia by a margin far above rounding, so the history stays
    non-increasing.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=C.shape[0])
    for _ in range(max_passes):
        moved = False
        for i in range(X.shape[0]):
            a = labels[i]
            if counts[a] < 2:
                continue
            d = ((C - X[i]) ** 2).sum(axis=1)
            gain = counts / (counts + 1.0) * d
            gain[a] = np.inf
            b = int(np.argmin(gain))
            delta = gain[b] - counts[a] / (counts[a] - 1.0) * d[a]
            if delta < -1e-10 * max(history[-1], 1e-300):
                labels[i] = b
                counts[a] -= 1
                counts[b] += 1
                C[a] = X[labels == a].mean(axis=0)
                C[b] = X[labels == b].mean(axis=0)
                history.append(_inertia(X, C, labels))
                moved = True
        if not moved:
            break
    return C, labels


def kmeans_fit(codes, k, seed=DEFAULT_SEED, restarts=1, max_iter=300):
    """Lloyd iterations from k-means++ seeding, refined by Hartigan moves.

    Keeps the best inertia over ``restarts`` runs.
    """
    X = np.asarray(codes, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T = X.shape[0]
    if k < 1 or T < k:
        raise ValueError(f"need 1 <= k <= number of points, got k={k}, T={T}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        C0 = _kmeans_pp(X, k, rng)
        C, labels, history, it = _lloyd(X, C0, max_iter)
        C, labels = _hartigan(X, C, labels, history)
        if best is None or history[-1] < best.inertia_history[-1]:
            best = KMeansModel(C, labels, history, seed, it)
    return best


def kmeans_assign(model, rho):
    """Nearest centroid, lowest index on ties; accepts one code or a ``(T, n_rho)`` batch."""
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 1:
        d = ((model.centroids - rho[None, :]) ** 2).sum(axis=1)
        return int(np.argmin(d))
    return np.argmin(_sq_dists(rho, model.centroids), axis=1)
