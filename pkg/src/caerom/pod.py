"""POD bases, the linear encoder/decoder, and clustered POD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import kmeans_assign


class RankDeficiencyError(ValueError):
    pass


@dataclass
class PodBasis:
    V: np.ndarray
    singular_values: np.ndarray
    weights: np.ndarray = None  # diagonal M when M-weighted

    @property
    def n_rho(self):
        return self.V.shape[1]

    def encode(self, v):
        return pod_encode(self, v)

    def decode(self, rho):
        return pod_decode(self, rho)


def _left_singular(X):
    """Thin SVD of ``X``; for T < n_v the snapshot space is reduced by QR first."""
    n, T = X.shape
    if T < n:
        Q, R = np.linalg.qr(X)
        U_r, s, _ = np.linalg.svd(R)
        return Q @ U_r, s
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    return U, s


def pod_fit(snapshots, n_rho, weights=None, rank_tol=1e-12):
    """Leading ``n_rho`` left singular vectors of the raw snapshot matrix.

    ``weights`` (a diagonal mass) switches to the M-weighted POD, whose
    basis is M-orthonormal.  Raises if the data has rank below ``n_rho``.
    """
    X = snapshots.states if hasattr(snapshots, "states") else np.asarray(snapshots, float)
    n, T = X.shape
    if not 1 <= n_rho <= min(n, T):
        raise ValueError(f"n_rho={n_rho} outside [1, {min(n, T)}]")
    if weights is not None:
        sq = np.sqrt(weights)
        U, s = _left_singular(sq[:, None] * X)
        V = U[:, :n_rho] / sq[:, None]
    else:
        U, s = _left_singular(X)
        V = U[:, :n_rho]
    if s[0] == 0.0 or s[n_rho - 1] <= rank_tol * s[0]:
        raise RankDeficiencyError(
            f"snapshot rank below n_rho={n_rho}: sigma_{n_rho}/sigma_1 = "
            f"{s[n_rho - 1] / s[0] if s[0] else 0.0:.2e}")
    return PodBasis(np.ascontiguousarray(V), s, weights)


def pod_encode(basis, v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != basis.V.shape[0]:
        raise ValueError(f"state length {v.shape[0]} != {basis.V.shape[0]}")
    if basis.weights is not None:
        return basis.V.T @ (basis.weights.reshape((-1,) + (1,) * (v.ndim - 1)) * v)
    return basis.V.T @ v


def pod_decode(basis, rho):
    rho = np.asarray(rho, dtype=float)
    if rho.shape[0] != basis.n_rho:
        raise ValueError(f"code length {rho.shape[0]} != {basis.n_rho}")
    return basis.V @ rho


@dataclass
class ClusteredPodModel:
    basis: PodBasis
    cluster_bases: list
    decoders: list  # V_l (V_l^T V), one n_v x n_rho matrix per cluster
    kmeans: object

    @property
    def k(self):
        return len(self.cluster_bases)

    @property
    def n_rho(self):
        return self.basis.n_rho

    def encode(self, v):
        return pod_encode(self.basis, v)

    def decode(self, rho):
        return cpod_decode(self, rho)


def cpod_fit(snapshots, n_rho, kmeans, basis=None):
    """Per-cluster POD bases from the snapshots grouped by ``kmeans.labels``."""
    X = snapshots.states if hasattr(snapshots, "states") else np.asarray(snapshots, float)
    basis = basis or pod_fit(X, n_rho)
    labels = np.asarray(kmeans.labels)
    if labels.size != X.shape[1]:
        raise ValueError("k-means labels do not match the snapshot count")
    cluster_bases, decoders = [], []
    for l in range(kmeans.k):
        members = X[:, labels == l]
        if members.shape[1] < n_rho:
            raise ValueError(
                f"cluster {l} has {members.shape[1]} members, fewer than n_rho={n_rho}")
        Vl = pod_fit(members, n_rho).V
        cluster_bases.append(Vl)
        decoders.append(Vl @ (Vl.T @ basis.V))
    return ClusteredPodModel(basis, cluster_bases, decoders, kmeans)


def cpod_decode(model, rho):
    """``V_l (V_l^T V) rho`` with ``l`` the nearest centroid of ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape[0] != model.n_rho:
        raise ValueError(f"code length {rho.shape[0]} != {model.n_rho}")
    if rho.ndim == 1:
        return model.decoders[kmeans_assign(model.kmeans, rho)] @ rho
    labels = kmeans_assign(model.kmeans, rho.T)
    out = np.empty((model.decoders[0].shape[0], rho.shape[1]))
    for l in np.unique(labels):
        sel = labels == l
        out[:, sel] = model.decoders[l] @ rho[:, sel]
    return out
