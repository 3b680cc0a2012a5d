"""Affine LPV form of the convection term and residuals at data points.

Every decoder here is affine on each cluster, ``decode(rho) = B_l rho + b_l``,
so ``N(decode(rho)) = N(b_l) + sum_i rho_i N(B_l[:, i])``. The stencil data of
``N(w)`` is linear in ``w``, which lets the sum run over CSR data arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autoencoder.models import CaeModel, CnnModel, IcaeModel, decoder_affine
from .operators import apply_pi, assemble_convection, minv_norm
from .pod import ClusteredPodModel, PodBasis

METHODS = ("pod", "cnn", "cae", "cpod", "icae")
CLUSTERED = ("cpod", "icae")


class ContractViolation(RuntimeError):
    """A decoder failed the affinity check needed for the LPV form."""


def method_of(model):
    if isinstance(model, PodBasis):
        return "pod"
    if isinstance(model, ClusteredPodModel):
        return "cpod"
    if isinstance(model, IcaeModel):
        return "icae"
    if isinstance(model, CnnModel):
        return "cnn"
    if isinstance(model, CaeModel):
        return "cae"
    raise TypeError(f"no LPV form for {type(model).__name__}")


def decoder_parts(model):
    """Per-cluster ``(B_l, b_l)``; ``b_l`` is None for linear decoders."""
    method = method_of(model)
    if method == "pod":
        return [(model.V, None)]
    if method == "cpod":
        return [(D, None) for D in model.decoders]
    if method == "cnn":
        return [(model.V @ model.W, None)]
    if method == "cae":
        return [decoder_affine(model)]
    return [decoder_affine(model, l) for l in range(model.k)]


def _cluster_decode(model, l, rho):
    method = method_of(model)
    if method == "icae":
        return model.decode_cluster(l, rho)
    if method == "cpod":
        return model.decoders[l] @ rho
    return model.decode(rho)


def check_affine(model, parts, n_trials=3, tol=1e-10, seed=0):
    """Compare probed ``(B_l, b_l)`` against the decoder on random codes."""
    rng = np.random.default_rng(seed)
    for l, (B, b) in enumerate(parts):
        for _ in range(n_trials):
            rho = rng.standard_normal(B.shape[1])
            direct = _cluster_decode(model, l, rho)
            probed = B @ rho + (0.0 if b is None else b)
            scale = max(np.linalg.norm(direct), 1e-300)
            if np.linalg.norm(direct - probed) > tol * scale:
                raise ContractViolation(
                    f"decoder of cluster {l} is not affine: superposition error "
                    f"{np.linalg.norm(direct - probed) / scale:.2e}")


@dataclass
class LpvCoefficients:
    method: str
    n_rho: int
    bases: list  # per cluster, n_v x n_rho
    offsets: list  # per cluster, offset vector or None
    mode_matrices: list  # per cluster, n_rho CSR matrices N(B_l[:, i])
    offset_matrices: list  # per cluster, N(b_l) or None
    _mode_data: list = field(default=None, repr=False)
    _offset_data: list = field(default=None, repr=False)
    _pattern: tuple = field(default=None, repr=False)

    @property
    def k(self):
        return len(self.bases)

    @property
    def clustered(self):
        return self.method in CLUSTERED


def precompute(ops, model, check=True):
    """Assemble ``N(b_l)`` and the ``n_rho * k`` mode matrices of a fitted model."""
    method = method_of(model)
    parts = decoder_parts(model)
    if check and method in ("cae", "icae", "cnn"):
        check_affine(model, parts)
    stencil = ops.convection_stencil
    bases, offsets, mats, off_mats, mode_data, off_data = [], [], [], [], [], []
    for B, b in parts:
        B = np.ascontiguousarray(B)
        data = np.asarray(stencil.weights @ B).T  # n_rho x nnz
        bases.append(B)
        offsets.append(b)
        mode_data.append(np.ascontiguousarray(data))
        mats.append([assemble_convection(ops, B[:, i]) for i in range(B.shape[1])])
        if b is None:
            off_mats.append(None)
            off_data.append(None)
        else:
            off_mats.append(assemble_convection(ops, b))
            off_data.append(stencil.weights @ b)
    return LpvCoefficients(method, parts[0][0].shape[1], bases, offsets, mats, off_mats,
                           mode_data, off_data,
                           (stencil.indices, stencil.indptr, stencil.shape))


def lpv_matrix(coeffs, rho, label=None):
    """``N(b_l) + sum_i rho_i N(B_l[:, i])`` as a CSR matrix."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (coeffs.n_rho,):
        raise ValueError(f"code length {rho.shape} != ({coeffs.n_rho},)")
    if coeffs.clustered:
        if label is None:
            raise ValueError(f"{coeffs.method} coefficients need a cluster label")
        if not 0 <= label < coeffs.k:
            raise ValueError(f"cluster label {label} outside [0, {coeffs.k})")
        l = int(label)
    else:
        l = 0
    data = rho @ coeffs._mode_data[l]
    if coeffs._offset_data[l] is not None:
        data = data + coeffs._offset_data[l]
    indices, indptr, shape = coeffs._pattern
    return sp.csr_matrix((data, indices, indptr), shape=shape)


def lpv_convection(coeffs, rho, v, label=None):
    """``[N(b_l) + sum_i rho_i N(B_l[:, i])] v`` from the precomputed coefficients."""
    return lpv_matrix(coeffs, rho, label) @ np.asarray(v, dtype=float)


def residual_at(ops, ctx, v, v_tilde, conv_tilde=None):
    """M^-1-norm of ``Pi^T[(N(vt) vt + A vt) - (N(v) v + A v)]`` and its relative form.

    ``conv_tilde`` may carry ``N(vt) vt`` from the LPV form; it is assembled
    directly otherwise. The relative part is None when its denominator is
    below 1e-300. ``f`` cancels in the difference.
    """
    full = assemble_convection(ops, v) @ v + ops.A @ v
    if conv_tilde is None:
        conv_tilde = assemble_convection(ops, v_tilde) @ v_tilde
    red = conv_tilde + ops.A @ v_tilde
    num = minv_norm(ops, apply_pi(ctx, red - full, transpose=True))
    den = minv_norm(ops, apply_pi(ctx, full, transpose=True))
    return num, (num / den if den >= 1e-300 else None)


@dataclass
class ReducedMatrices:
    """``hatM = M B_l``, ``hatA = A B_l`` and ``hatf = f - A b_l`` per cluster."""

    hatM: list
    hatA: list
    hatf: list
    coeffs: LpvCoefficients

    def hatN(self, rho, label=None):
        """``N(decode(rho)) B_l``, the convection term in reduced coordinates."""
        l = 0 if label is None else int(label)
        return lpv_matrix(self.coeffs, rho, label) @ self.coeffs.bases[l]


def reduced_matrices(ops, coeffs):
    hatM, hatA, hatf = [], [], []
    for B, b in zip(coeffs.bases, coeffs.offsets):
        hatM.append(ops.M[:, None] * B)
        hatA.append(np.asarray(ops.A @ B))
        hatf.append(ops.f - (0.0 if b is None else ops.A @ b))
    return ReducedMatrices(hatM, hatA, hatf, coeffs)


def pod_galerkin(ops, basis):
    """``V^T``-projected POD matrices: ``(V^T M V, V^T A V, V^T f)``."""
    V = basis.V
    return V.T @ (ops.M[:, None] * V), V.T @ (ops.A @ V), V.T @ ops.f
