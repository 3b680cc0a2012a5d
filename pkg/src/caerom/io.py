"""Binary matrix container, JSON manifests and model checkpoints.

Container layout (little-endian): 16-byte magic, uint32 version, uint32
dtype code (1 = float64), uint64 rows, uint64 cols, then the payload in
column-major order. Sparse matrices are stored as a dense ``(nnz + 1) x 3``
triplet table whose first row is ``(rows, cols, nnz)``.
"""

from __future__ import annotations

import copy
import json
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MAGIC = b"CAEROM-MATRIX\x00\x00\x00"
CONTAINER_VERSION = 1
CHECKPOINT_VERSION = 1
_DTYPES = {1: np.dtype("<f8")}
_HEADER = struct.Struct("<16sIIQQ")


class FormatError(ValueError):
    pass


def write_matrix(path, A):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("container holds 1-D or 2-D arrays only")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, CONTAINER_VERSION, 1, A.shape[0], A.shape[1]))
        fh.write(np.asfortranarray(A).astype("<f8").tobytes(order="F"))


def read_matrix(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dtype, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a matrix container")
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: container version {version} unsupported")
    if dtype not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {dtype}")
    n = rows * cols
    if len(raw) - _HEADER.size < n * _DTYPES[dtype].itemsize:
        raise FormatError(f"{path}: truncated payload")
    payload = np.frombuffer(raw, dtype=_DTYPES[dtype], count=n, offset=_HEADER.size)
    return payload.reshape((rows, cols), order="F").astype(float)


def write_sparse(path, S):
    S = sp.coo_matrix(S)
    S.sum_duplicates()
    table = np.empty((S.nnz + 1, 3))
    table[0] = (S.shape[0], S.shape[1], S.nnz)
    table[1:, 0], table[1:, 1], table[1:, 2] = S.row, S.col, S.data
    write_matrix(path, table)


def read_sparse(path):
    table = read_matrix(path)
    if table.shape[1] != 3:
        raise FormatError(f"{path}: not a triplet table")
    rows, cols, nnz = (int(x) for x in table[0])
    t = table[1:nnz + 1]
    return sp.csr_matrix((t[:, 2], (t[:, 0].astype(int), t[:, 1].astype(int))),
                         shape=(rows, cols))


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# checkpoints ---------------------------------------------------------------

def _seq_state(seq, prefix):
    state = {}
    for i, layer in enumerate(seq.layers):
        for name, arr in list(layer.params.items()) + list(layer.buffers.items()):
            state[f"{prefix}.{i}.{name}"] = arr
        if hasattr(layer, "V"):
            state[f"{prefix}.{i}.V"] = layer.V
    return state


def _load_seq(seq, prefix, state):
    for i, layer in enumerate(seq.layers):
        for store in (layer.params, layer.buffers):
            for name in store:
                store[name] = _take(state, f"{prefix}.{i}.{name}", store[name].shape)
        if hasattr(layer, "V"):
            layer.V = _take(state, f"{prefix}.{i}.V", layer.V.shape)


def _take(state, key, shape):
    if key not in state:
        raise FormatError(f"checkpoint is missing {key}")
    arr = state[key]
    if arr.shape != tuple(shape):
        raise FormatError(f"{key}: shape {arr.shape} != expected {tuple(shape)}")
    return arr.copy()


def _write_state(directory, state, manifest):
    names = list(state)
    blob = np.concatenate([np.asarray(state[n], float).ravel() for n in names]) \
        if names else np.zeros(0)
    offsets, pos = [], 0
    for n in names:
        size = int(np.asarray(state[n]).size)
        offsets.append({"name": n, "shape": list(np.shape(state[n])), "offset": pos})
        pos += size
    manifest = dict(manifest, format_version=CHECKPOINT_VERSION, arrays=offsets)
    write_matrix(Path(directory) / "params.bin", blob)
    write_json(Path(directory) / "manifest.json", manifest)


def _read_state(directory):
    manifest = read_json(Path(directory) / "manifest.json")
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{directory}: checkpoint version {version} != {CHECKPOINT_VERSION}")
    blob = read_matrix(Path(directory) / "params.bin")[:, 0]
    state = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        state[entry["name"]] = blob[entry["offset"]:entry["offset"] + size].reshape(shape)
    return manifest, state


def _kmeans_state(km, prefix="kmeans"):
    return {f"{prefix}.centroids": km.centroids, f"{prefix}.labels": km.labels.astype(float),
            f"{prefix}.inertia_history": np.asarray(km.inertia_history, float)}


def _kmeans_from(state, manifest, prefix="kmeans"):
    from .clustering import KMeansModel
    return KMeansModel(state[f"{prefix}.centroids"].copy(),
                       state[f"{prefix}.labels"].astype(int),
                       list(state[f"{prefix}.inertia_history"]),
                       manifest["seed"], manifest.get("kmeans_iterations", 0))


def save_model(directory, model, extra=None):
    """Write ``manifest.json`` + ``params.bin`` for any fitted method."""
    from .lpv import method_of
    method = method_of(model)
    manifest = {"method": method, "n_rho": int(model.n_rho), **(extra or {})}
    if method == "pod":
        state = {"V": model.V, "singular_values": model.singular_values}
        manifest["seed"] = 0
    elif method == "cpod":
        state = {"V": model.basis.V, "singular_values": model.basis.singular_values}
        for l, Vl in enumerate(model.cluster_bases):
            state[f"cluster.{l}.V"] = Vl
        state.update(_kmeans_state(model.kmeans))
        manifest.update(k=model.k, seed=model.kmeans.seed,
                        kmeans_iterations=model.kmeans.iterations)
    elif method in ("cae", "cnn"):
        state = {**_seq_state(model.encoder, "enc"), **_seq_state(model.decoder, "dec")}
        manifest.update(model.manifest())
    else:
        state = _seq_state(model.encoder, "enc")
        for l, dec in enumerate(model.decoders):
            state.update(_seq_state(dec, f"dec{l}"))
        state.update(_kmeans_state(model.kmeans))
        manifest.update(model.manifest(), kmeans_iterations=model.kmeans.iterations)
    _write_state(directory, state, manifest)


def load_model(directory, pair=None, arch=None):
    """Inverse of :func:`save_model`; neural models need the interpolation ``pair``.

    ``arch`` may carry ``conv_channels``/``deconv_channels`` used at build time;
    the stored layer specs are checked against the rebuilt network.
    """
    from .autoencoder import build_cae, build_cnn
    from .autoencoder.models import IcaeModel
    from .pod import ClusteredPodModel, PodBasis

    manifest, state = _read_state(directory)
    method = manifest["method"]
    n_rho = manifest["n_rho"]
    arch = arch or {}
    if method == "pod":
        return PodBasis(state["V"].copy(), state["singular_values"].copy())
    if method == "cpod":
        basis = PodBasis(state["V"].copy(), state["singular_values"].copy())
        km = _kmeans_from(state, manifest)
        bases = [state[f"cluster.{l}.V"].copy() for l in range(manifest["k"])]
        return ClusteredPodModel(basis, bases, [Vl @ (Vl.T @ basis.V) for Vl in bases], km)
    if pair is None:
        raise ValueError(f"loading a {method} checkpoint needs the interpolation pair")
    if method == "cnn":
        V = state["dec.0.V"]
        model = build_cnn(pair, V, n_rho, **_channels(arch, "conv_channels"))
    else:
        model = build_cae(pair, n_rho, **_channels(arch, "conv_channels", "deconv_channels"))
    _load_seq(model.encoder, "enc", state)
    if model.encoder.spec() != manifest["encoder"]:
        raise FormatError(f"{directory}: encoder architecture does not match the config")
    if method in ("cae", "cnn"):
        _load_seq(model.decoder, "dec", state)
        model.seed = manifest["seed"]
        return model
    decoders = []
    for l in range(manifest["k"]):
        dec = copy.deepcopy(model.decoder)
        _load_seq(dec, f"dec{l}", state)
        decoders.append(dec)
    return IcaeModel(model.encoder, _kmeans_from(state, manifest), decoders, model.I_c,
                     model.image_shape, n_rho, manifest["seed"])


def _channels(arch, *keys):
    return {k: tuple(arch[k]) for k in keys if k in arch}
