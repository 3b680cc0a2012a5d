"""Fixed layer zoo with hand-written backward passes (NCHW, float64).

Every layer maps ``forward(x) -> (y, cache)`` and
``backward(dy, cache) -> (dx, grads)`` where ``grads`` mirrors ``params``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def deconv_out_size(n, k, stride, pad, output_padding):
    return (n - 1) * stride - 2 * pad + k + output_padding


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"
    params: dict

    def __init__(self):
        self.params = {}
        self.buffers = {}

    def spec(self):
        return {"kind": self.kind}

    def out_shape(self, in_shape):
        return in_shape


class Standardize(Layer):
    """Fixed ``(x - mean) / scale`` on encoder inputs; nothing trainable."""

    kind = "normalization"

    def __init__(self, mean, scale):
        super().__init__()
        self.buffers = {"mean": np.asarray(mean, dtype=float),
                        "scale": np.asarray(scale, dtype=float)}

    def spec(self):
        return {"kind": self.kind, "shape": list(self.buffers["mean"].shape)}

    def forward(self, x):
        return (x - self.buffers["mean"]) / self.buffers["scale"], None

    def backward(self, dy, cache):
        return dy / self.buffers["scale"], {}


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, c_in, c_out, kernel=5, stride=2, pad=2, rng=None):
        super().__init__()
        self.c_in, self.c_out, self.k, self.s, self.p = c_in, c_out, kernel, stride, pad
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kernel * kernel
        self.params = {
            "weight": _uniform(rng, (c_out, c_in, kernel, kernel), fan_in),
            "bias": _uniform(rng, (c_out,), fan_in),
        }

    def spec(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out,
                "kernel": self.k, "stride": self.s, "pad": self.p}

    def out_shape(self, in_shape):
        _, h, w = in_shape
        return (self.c_out, conv_out_size(h, self.k, self.s, self.p),
                conv_out_size(w, self.k, self.s, self.p))

    def forward(self, x):
        n, c, h, w = x.shape
        k, s, p = self.k, self.s, self.p
        ho, wo = conv_out_size(h, k, s, p), conv_out_size(w, k, s, p)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        wmat = self.params["weight"].reshape(self.c_out, -1)
        y = cols @ wmat.T + self.params["bias"]
        y = y.reshape(n, ho, wo, self.c_out).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (cols, x.shape)

    def backward(self, dy, cache):
        cols, (n, c, h, w) = cache
        k, s, p = self.k, self.s, self.p
        ho, wo = dy.shape[2:]
        g = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        wmat = self.params["weight"].reshape(self.c_out, -1)
        grads = {"weight": (g.T @ cols).reshape(self.params["weight"].shape),
                 "bias": g.sum(axis=0)}
        # per-offset blocks laid out (k, k, C, N, Ho, Wo) so each scatter is contiguous
        wk = self.params["weight"].transpose(2, 3, 1, 0).reshape(k * k * c, self.c_out)
        dcols = (wk @ g.T).reshape(k, k, c, n, ho, wo)
        dxp = np.zeros((c, n, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[i, j]
        return dxp[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3), grads


class ConvTranspose2d(Layer):
    """Adjoint of a strided convolution; ``output_padding`` fixes the output size."""

    kind = "deconv"

    def __init__(self, c_in, c_out, kernel=5, stride=2, pad=2, output_padding=1, rng=None):
        super().__init__()
        op = (output_padding, output_padding) if np.isscalar(output_padding) else output_padding
        self.op = tuple(int(o) for o in op)
        if not all(0 <= o < stride for o in self.op):
            raise ValueError("output_padding must lie in [0, stride)")
        self.c_in, self.c_out, self.k, self.s, self.p = c_in, c_out, kernel, stride, pad
        rng = rng or np.random.default_rng(0)
        fan_in = c_in * kernel * kernel
        self.params = {
            "weight": _uniform(rng, (c_in, c_out, kernel, kernel), fan_in),
            "bias": _uniform(rng, (c_out,), fan_in),
        }

    def spec(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": self.k,
                "stride": self.s, "pad": self.p, "output_padding": list(self.op)}

    def out_shape(self, in_shape):
        _, h, w = in_shape
        return (self.c_out, deconv_out_size(h, self.k, self.s, self.p, self.op[0]),
                deconv_out_size(w, self.k, self.s, self.p, self.op[1]))

    def forward(self, x):
        n, c, h, w = x.shape
        k, s, p = self.k, self.s, self.p
        ho = deconv_out_size(h, k, s, p, self.op[0])
        wo = deconv_out_size(w, k, s, p, self.op[1])
        xf = x.transpose(0, 2, 3, 1).reshape(-1, c)
        wk = self.params["weight"].transpose(2, 3, 1, 0).reshape(k * k * self.c_out, c)
        cols = (wk @ xf.T).reshape(k, k, self.c_out, n, h, w)
        buf = np.zeros((self.c_out, n, (h - 1) * s + k, (w - 1) * s + k))
        for i in range(k):
            for j in range(k):
                buf[:, :, i:i + s * (h - 1) + 1:s, j:j + s * (w - 1) + 1:s] += cols[i, j]
        y = buf[:, :, p:p + ho, p:p + wo].transpose(1, 0, 2, 3) \
            + self.params["bias"][None, :, None, None]
        return np.ascontiguousarray(y), (xf, x.shape, (n, self.c_out) + buf.shape[2:])

    def backward(self, dy, cache):
        xf, (n, c, h, w), buf_shape = cache
        k, s, p = self.k, self.s, self.p
        ho, wo = dy.shape[2:]
        dbuf = np.zeros(buf_shape)
        dbuf[:, :, p:p + ho, p:p + wo] = dy
        win = sliding_window_view(dbuf, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :h, :w]
        dcols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, self.c_out * k * k)
        wmat = self.params["weight"].reshape(c, -1)
        grads = {"weight": (xf.T @ dcols).reshape(self.params["weight"].shape),
                 "bias": dy.sum(axis=(0, 2, 3))}
        dx = (dcols @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dx), grads


class Dense(Layer):
    kind = "fc"

    def __init__(self, n_in, n_out, bias=True, rng=None):
        super().__init__()
        self.n_in, self.n_out, self.has_bias = n_in, n_out, bias
        rng = rng or np.random.default_rng(0)
        self.params = {"weight": _uniform(rng, (n_out, n_in), n_in)}
        if bias:
            self.params["bias"] = _uniform(rng, (n_out,), n_in)

    def spec(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out, "bias": self.has_bias}

    def out_shape(self, in_shape):
        return (self.n_out,)

    def forward(self, x):
        y = x @ self.params["weight"].T
        if self.has_bias:
            y = y + self.params["bias"]
        return y, x

    def backward(self, dy, x):
        grads = {"weight": dy.T @ x}
        if self.has_bias:
            grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"], grads


class ELU(Layer):
    kind = "activation"

    def __init__(self, alpha=1.0):
        super().__init__()
        self.alpha = alpha

    def spec(self):
        return {"kind": self.kind, "name": "elu", "alpha": self.alpha}

    def forward(self, x):
        y = np.where(x > 0, x, self.alpha * np.expm1(np.minimum(x, 0.0)))
        return y, (x, y)

    def backward(self, dy, cache):
        x, y = cache
        return dy * np.where(x > 0, 1.0, y + self.alpha), {}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape):
        return dy.reshape(shape), {}


class Unflatten(Layer):
    kind = "unflatten"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def spec(self):
        return {"kind": self.kind, "shape": list(self.shape)}

    def out_shape(self, in_shape):
        return self.shape

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, dy, shape):
        return dy.reshape(shape), {}


class SparseLinear(Layer):
    """``y = P x`` with a fixed sparsity pattern and trainable entries (the learned ``I_p``)."""

    kind = "interpolation"

    def __init__(self, matrix):
        super().__init__()
        mat = sp.csr_matrix(matrix)
        mat.sort_indices()
        self.shape = mat.shape
        self.indptr = mat.indptr.copy()
        self.indices = mat.indices.copy()
        self.rows = np.repeat(np.arange(mat.shape[0]), np.diff(mat.indptr))
        self.params = {"values": mat.data.astype(float).copy()}

    def spec(self):
        return {"kind": self.kind, "n_out": self.shape[0], "n_in": self.shape[1],
                "nnz": int(self.indices.size)}

    def out_shape(self, in_shape):
        return (self.shape[0],)

    def matrix(self):
        return sp.csr_matrix((self.params["values"], self.indices, self.indptr), shape=self.shape)

    def forward(self, x):
        return np.asarray((self.matrix() @ x.T).T), x

    def backward(self, dy, x):
        dvals = np.einsum("nk,nk->k", dy[:, self.rows], x[:, self.indices])
        dx = np.asarray((self.matrix().T @ dy.T).T)
        return dx, {"values": dvals}


class PodLinear(Layer):
    """``v = V (W rho)`` with ``V`` fixed and ``W`` trainable."""

    kind = "pod"

    def __init__(self, V, n_rho, rng=None):
        super().__init__()
        self.V = np.ascontiguousarray(V)
        r = V.shape[1]
        rng = rng or np.random.default_rng(0)
        self.params = {"weight": _uniform(rng, (r, n_rho), n_rho)}

    def spec(self):
        return {"kind": self.kind, "r": self.V.shape[1], "n_rho": self.params["weight"].shape[1],
                "n_v": self.V.shape[0]}

    def out_shape(self, in_shape):
        return (self.V.shape[0],)

    def forward(self, x):
        z = x @ self.params["weight"].T
        return z @ self.V.T, x

    def backward(self, dy, x):
        dz = dy @ self.V
        return dz @ self.params["weight"], {"weight": dz.T @ x}


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def named_params(self, prefix):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out[f"{prefix}.{i}.{name}"] = arr
        return out

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches, prefix):
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(dy, caches[i])
            for name, arr in g.items():
                grads[f"{prefix}.{i}.{name}"] = arr
        return dy, grads

    def spec(self):
        return [layer.spec() for layer in self.layers]

    def pre_activations(self, caches):
        """ELU inputs recorded in ``caches`` (used by the gradient check)."""
        return [c[0] for layer, c in zip(self.layers, caches) if isinstance(layer, ELU)]
