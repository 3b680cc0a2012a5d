"""CNN, CAE and iCAE models built from the layer zoo."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..clustering import kmeans_assign
from .layers import (ELU, ConvTranspose2d, Conv2d, Dense, Flatten, PodLinear, Sequential,
                     SparseLinear, Standardize, Unflatten)

CAE_CONV_CHANNELS = (4, 8, 8)
CAE_DECONV_CHANNELS = (8, 8, 4)
CNN_CONV_CHANNELS = (4, 8, 10, 12)
KERNEL, STRIDE, PAD = 5, 2, 2


def input_statistics(pair, data, in_shape):
    """Per-pixel mean and per-channel RMS fluctuation of the training images."""
    if data is None:
        return np.zeros(in_shape), np.ones((in_shape[0], 1, 1))
    X = data.states if hasattr(data, "states") else np.asarray(data, dtype=float)
    imgs = (pair.I_c @ X).T.reshape((-1,) + tuple(in_shape))
    mean = imgs.mean(axis=0)
    rms = np.sqrt(((imgs - mean) ** 2).mean(axis=(0, 2, 3)))
    rms[rms < 1e-12] = 1.0
    return mean, rms[:, None, None]


def build_encoder(in_shape, channels, n_rho, rng, stats=None):
    """Input standardization, strided convs with ELU, then an affine map to ``n_rho`` codes.

    Returns the network and the feature shape after every conv (input first).
    """
    mean, scale = stats if stats is not None else input_statistics(None, None, in_shape)
    layers, shapes = [Standardize(mean, scale)], [tuple(in_shape)]
    c = in_shape[0]
    for c_out in channels:
        conv = Conv2d(c, c_out, KERNEL, STRIDE, PAD, rng=rng)
        shapes.append(conv.out_shape(shapes[-1]))
        layers += [conv, ELU(1.0)]
        c = c_out
    layers += [Flatten(), Dense(int(np.prod(shapes[-1])), n_rho, rng=rng)]
    return Sequential(layers), shapes


def build_cae_decoder(shapes, deconv_channels, n_rho, I_p, rng):
    """fc -> unflatten -> transposed convs -> trainable interpolation; no activations."""
    n_deconv = len(shapes) - 1
    if len(deconv_channels) != n_deconv:
        raise ValueError(f"{len(deconv_channels)} deconv layers cannot mirror {n_deconv} convs")
    top = (deconv_channels[0],) + tuple(shapes[-1][1:])
    layers = [Dense(n_rho, int(np.prod(top)), rng=rng), Unflatten(top)]
    outs = list(deconv_channels[1:]) + [shapes[0][0]]
    shape = top
    for c_in, c_out, target in zip(deconv_channels, outs, reversed(shapes[:-1])):
        # output_padding picks the mirrored encoder size exactly
        base = ConvTranspose2d(c_in, c_out, KERNEL, STRIDE, PAD, 0).out_shape(shape)
        op = (target[1] - base[1], target[2] - base[2])
        if not all(0 <= o < STRIDE for o in op):
            raise ValueError(f"cannot mirror encoder shape {target} from {shape}")
        layers.append(ConvTranspose2d(c_in, c_out, KERNEL, STRIDE, PAD, op, rng=rng))
        shape = layers[-1].out_shape(shape)
    layers += [Flatten(), SparseLinear(I_p)]
    return Sequential(layers)


def _rows_in(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != n:
        raise ValueError(f"leading dimension {x.shape[0]} != {n}")
    return x


def _hash_params(params):
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


class _EncoderMixin:
    """Encoder plumbing shared by all three models (images are ``(N, 2, h, w)``)."""

    def encode_images(self, images):
        images = np.asarray(images, dtype=float)
        single = images.ndim == 3
        if single:
            images = images[None]
        if images.shape[1:] != tuple(self.image_shape):
            raise ValueError(f"image shape {images.shape[1:]} != {tuple(self.image_shape)}")
        rho, _ = self.encoder.forward(images)
        return rho[0] if single else rho

    def to_images(self, v):
        """Column states ``(n_v,)`` / ``(n_v, T)`` to ``(T, 2, h, w)`` images."""
        v = _rows_in(v, self.I_c.shape[1])
        cols = v[:, None] if v.ndim == 1 else v
        return np.ascontiguousarray((self.I_c @ cols).T.reshape((-1,) + tuple(self.image_shape)))

    def encode(self, v):
        """Codes of column states: ``(n_v,) -> (n_rho,)``, ``(n_v, T) -> (n_rho, T)``."""
        rho = self.encode_images(self.to_images(v))
        return rho[0] if np.ndim(v) == 1 else rho.T

    def encoder_hash(self):
        return _hash_params(self.encoder.named_params("enc"))


def _decode_with(net, rho, n_rho):
    rho = _rows_in(rho, n_rho)
    rows = rho[None, :] if rho.ndim == 1 else rho.T
    out, _ = net.forward(rows)
    return out[0] if rho.ndim == 1 else out.T


@dataclass
class CaeModel(_EncoderMixin):
    encoder: Sequential
    decoder: Sequential
    I_c: object
    image_shape: tuple
    n_rho: int
    seed: int = 0

    kind = "cae"

    def params(self):
        return {**self.encoder.named_params("enc"), **self.decoder.named_params("dec")}

    def forward(self, images):
        rho, c_enc = self.encoder.forward(images)
        v, c_dec = self.decoder.forward(rho)
        return v, (c_enc, c_dec)

    def backward(self, dv, caches):
        c_enc, c_dec = caches
        drho, g_dec = self.decoder.backward(dv, c_dec, "dec")
        _, g_enc = self.encoder.backward(drho, c_enc, "enc")
        return {**g_enc, **g_dec}

    def pre_activations(self, caches):
        return self.encoder.pre_activations(caches[0])

    def decode(self, rho):
        return _decode_with(self.decoder, rho, self.n_rho)

    def manifest(self):
        return {"kind": self.kind, "n_rho": self.n_rho, "seed": self.seed,
                "image_shape": list(self.image_shape),
                "encoder": self.encoder.spec(), "decoder": self.decoder.spec()}


@dataclass
class CnnModel(CaeModel):
    """Encoder plus ``v = V (W rho)``; the decoder is a single ``PodLinear`` layer."""

    kind = "cnn"

    @property
    def W(self):
        return self.decoder.layers[0].params["weight"]

    @property
    def V(self):
        return self.decoder.layers[0].V


@dataclass
class IcaeModel(_EncoderMixin):
    encoder: Sequential
    kmeans: object
    decoders: list
    I_c: object
    image_shape: tuple
    n_rho: int
    seed: int = 0
    loss_curves: list = field(default_factory=list)

    kind = "icae"

    @property
    def k(self):
        return len(self.decoders)

    def decode(self, rho):
        if self.kmeans is None:
            raise RuntimeError("iCAE has no fitted cluster model")
        rho = _rows_in(rho, self.n_rho)
        if rho.ndim == 1:
            return _decode_with(self.decoders[kmeans_assign(self.kmeans, rho)], rho, self.n_rho)
        labels = kmeans_assign(self.kmeans, rho.T)
        out = None
        for l in np.unique(labels):
            sel = labels == l
            part = _decode_with(self.decoders[l], rho[:, sel], self.n_rho)
            if out is None:
                out = np.empty((part.shape[0], rho.shape[1]))
            out[:, sel] = part
        return out

    def decode_cluster(self, l, rho):
        return _decode_with(self.decoders[l], rho, self.n_rho)

    def manifest(self):
        return {"kind": self.kind, "n_rho": self.n_rho, "seed": self.seed, "k": self.k,
                "image_shape": list(self.image_shape), "encoder": self.encoder.spec(),
                "decoder": self.decoders[0].spec()}


def build_cae(pair, n_rho, conv_channels=CAE_CONV_CHANNELS,
              deconv_channels=CAE_DECONV_CHANNELS, seed=0, data=None):
    """Untrained CAE; ``data`` (training states) sets the encoder input standardization."""
    rng = np.random.default_rng(seed)
    in_shape = (2, pair.h, pair.w)
    stats = input_statistics(pair, data, in_shape)
    encoder, shapes = build_encoder(in_shape, conv_channels, n_rho, rng, stats)
    decoder = build_cae_decoder(shapes, deconv_channels, n_rho, pair.I_p, rng)
    return CaeModel(encoder, decoder, pair.I_c, in_shape, n_rho, seed)


def build_cnn(pair, V, n_rho, conv_channels=CNN_CONV_CHANNELS, seed=0, data=None):
    rng = np.random.default_rng(seed)
    in_shape = (2, pair.h, pair.w)
    stats = input_statistics(pair, data, in_shape)
    encoder, _ = build_encoder(in_shape, conv_channels, n_rho, rng, stats)
    decoder = Sequential([PodLinear(np.asarray(V, dtype=float), n_rho, rng=rng)])
    return CnnModel(encoder, decoder, pair.I_c, in_shape, n_rho, seed)


def encode(model, img):
    return model.encode_images(img)


def decode_cae(model, rho):
    return model.decode(rho)


def decode_cnn(model, rho):
    return model.decode(rho)


def decode_icae(model, rho):
    return model.decode(rho)


def decoder_affine(model, cluster=None):
    """``(D, b)`` of an affine decoder by unit-vector probing: ``b = phi(0)``, ``D e_i = phi(e_i) - b``."""
    net = model.decoder if cluster is None else model.decoders[cluster]
    probes = np.vstack([np.zeros(model.n_rho), np.eye(model.n_rho)])
    out, _ = net.forward(probes)
    b = out[0].copy()
    D = (out[1:] - b).T
    return np.ascontiguousarray(D), b
