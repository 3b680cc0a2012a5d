"""Mini-batch ADAM training, iCAE decoder training and the finite-difference check."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .layers import Sequential
from .models import IcaeModel, _hash_params


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    milestones: tuple = None  # default: 50% and 75% of the epochs
    gamma: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def resolved_milestones(self):
        if self.milestones is None:
            return tuple(sorted({max(1, self.epochs // 2), max(1, (3 * self.epochs) // 4)}))
        return tuple(self.milestones)

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        ms = self.resolved_milestones()
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(not 0 < m <= self.epochs for m in ms):
            raise ValueError(f"milestones {ms} must be strictly increasing within [1, epochs]")
        return self


@dataclass
class TrainResult:
    model: object
    loss_curve: list = field(default_factory=list)


class Adam:
    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            p -= lr * (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + c.eps)


class _Objective:
    """MSE of a network ``net`` (forward/backward/params) on rows ``(inputs, targets)``."""

    def __init__(self, net, inputs, targets):
        self.net, self.inputs, self.targets = net, inputs, targets

    def loss_grad(self, idx):
        out, caches = self.net.forward(self.inputs[idx])
        diff = out - self.targets[idx]
        loss = float(np.mean(diff * diff))
        grads = self.net.backward(diff * (2.0 / diff.size), caches)
        return loss, grads

    def full_loss(self, chunk=256):
        n = self.inputs.shape[0]
        total = 0.0
        for s in range(0, n, chunk):
            out, _ = self.net.forward(self.inputs[s:s + chunk])
            total += float(np.sum((out - self.targets[s:s + chunk]) ** 2))
        return total / (n * self.targets.shape[1])


def _param_norms(params):
    return ", ".join(f"{k}={np.linalg.norm(v):.3e}" for k, v in params.items())


def _fit(obj, params, cfg, keep_best=False):
    cfg.validate()
    n = obj.inputs.shape[0]
    if n == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params, cfg)
    milestones = cfg.resolved_milestones()
    best, best_loss = None, np.inf
    if keep_best:
        best_loss = obj.full_loss()
        best = {k: v.copy() for k, v in params.items()}
    curve = []
    lr = cfg.lr
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, s in enumerate(range(0, n, cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            loss, grads = obj.loss_grad(idx)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}; "
                                    f"parameter norms: {_param_norms(params)}")
            total += loss * idx.size
            opt.step(grads, lr)
        curve.append(total / n)
        if keep_best:
            full = obj.full_loss()
            if full < best_loss:
                best_loss = full
                best = {k: v.copy() for k, v in params.items()}
        if epoch in milestones:
            lr *= cfg.gamma
    if keep_best:
        for k, v in params.items():
            v[...] = best[k]
    return curve, best_loss


def _targets(data):
    X = data.states if hasattr(data, "states") else np.asarray(data, dtype=float)
    return np.ascontiguousarray(X.T)


def train(model, data, pair=None, cfg=None):
    """Fit a CAE or CNN model to the snapshots; returns the model and per-epoch mean losses."""
    cfg = cfg or TrainConfig()
    targets = _targets(data)
    if targets.shape[0] == 0:
        raise ValueError("no training snapshots")
    if pair is not None and pair.I_c.shape[0] != model.I_c.shape[0]:
        raise ValueError("interpolation pair does not match the model")
    images = model.to_images(targets.T)
    curve, _ = _fit(_Objective(model, images, targets), model.params(), cfg)
    return TrainResult(model, curve)


class _DecoderNet:
    def __init__(self, seq):
        self.seq = seq

    def params(self):
        return self.seq.named_params("dec")

    def forward(self, x):
        return self.seq.forward(x)

    def backward(self, dy, caches):
        return self.seq.backward(dy, caches, "dec")[1]

    def pre_activations(self, caches):
        return self.seq.pre_activations(caches)


def train_icae(cae, kmeans, data, cfg=None):
    """k decoders warm-started from ``cae.decoder``, each trained on its own cluster.

    The encoder is shared and never updated. Each decoder keeps its best
    checkpoint by cluster loss, the warm start included.
    """
    cfg = cfg or TrainConfig()
    targets = _targets(data)
    enc_hash = cae.encoder_hash()
    codes = cae.encode_images(cae.to_images(targets.T))
    labels = np.asarray(kmeans.labels)
    if labels.size != targets.shape[0]:
        raise ValueError("k-means labels do not match the snapshot count")
    decoders, curves = [], []
    for l in range(kmeans.k):
        sel = np.flatnonzero(labels == l)
        if sel.size == 0:
            raise ValueError(f"cluster {l} is empty")
        net = _DecoderNet(copy.deepcopy(cae.decoder))
        curve, _ = _fit(_Objective(net, codes[sel], targets[sel]), net.params(), cfg,
                        keep_best=True)
        decoders.append(net.seq)
        curves.append(curve)
    if cae.encoder_hash() != enc_hash:
        raise TrainingError("encoder parameters changed during decoder training")
    return IcaeModel(cae.encoder, kmeans, decoders, cae.I_c, cae.image_shape, cae.n_rho,
                     cae.seed, curves)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    skipped: list = field(default_factory=list)
    worst: tuple = None  # (parameter, flat index, finite difference, analytic)


def gradient_check(model, sample, step=1e-5, floor=1e-6, kink_tol=1e-6):
    """Every parameter gradient of the MSE loss against central differences.

    ``sample = (x, v)`` holds one or more input rows and their target rows.
    Entries whose perturbation moves any ELU pre-activation across or within
    ``kink_tol`` of zero are skipped and listed in the result. Relative
    errors use ``max(|fd|, |grad|, floor * max|grad|)`` as denominator, so
    gradients far below the largest one are judged on absolute accuracy.
    """
    net = _DecoderNet(model) if isinstance(model, Sequential) else model
    x, v = (np.asarray(a, dtype=float) for a in sample)
    if x.ndim == len(getattr(model, "image_shape", ())) or x.ndim == 1:
        x, v = x[None], v[None]
    obj = _Objective(net, x, v)
    idx = np.arange(x.shape[0])
    _, grads = obj.loss_grad(idx)

    def outputs():
        out, caches = net.forward(x)
        pre = net.pre_activations(caches)
        near = any(np.any(np.abs(z) < kink_tol) for z in pre)
        return out, [z > 0 for z in pre], near

    _, base_signs, _ = outputs()
    scale = floor * max(float(np.max(np.abs(g))) for g in grads.values())
    worst, n_checked, skipped, worst_at = 0.0, 0, [], None
    for name, p in net.params().items():
        flat = p.reshape(-1)
        g_flat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            yp, sp_, near_p = outputs()
            flat[i] = orig - h
            ym, sm, near_m = outputs()
            flat[i] = orig
            crossed = any(np.any(a != b) for a, b in zip(sp_, base_signs)) or \
                any(np.any(a != b) for a, b in zip(sm, base_signs))
            if crossed or near_p or near_m:
                skipped.append((name, i))
                continue
            # L(+) - L(-) in factored form: no cancellation between two losses
            fd = float(np.mean((yp - ym) * (yp + ym - 2.0 * v))) / (2.0 * h)
            an = g_flat[i]
            rel = abs(fd - an) / max(abs(fd), abs(an), scale, 1e-300)
            if rel > worst:
                worst, worst_at = rel, (name, i, fd, float(an))
            n_checked += 1
    return GradCheckResult(worst, n_checked, skipped, worst_at)


def parameter_hash(params):
    return _hash_params(params)
