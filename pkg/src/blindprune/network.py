"""Fully connected classifier: forward/backward passes, Adam under a prune mask,
and a binary checkpoint format.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset
from .errors import FormatError, InputError, ShapeError
from .numerics import (
    ACTIVATION_NAMES,
    DTYPE,
    IDENTITY,
    RELU,
    Activation,
    activation_apply,
    activation_grad,
)

DEFAULT_DIMS = (784, 392, 196, 10)
DEFAULT_BATCH_SIZE = 64


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Activation = Activation(RELU)

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise InputError("layer dimensions must be positive")


@dataclass
class Layer:
    weights: np.ndarray  # in_dim x out_dim
    bias: np.ndarray  # out_dim
    activation: Activation

    @property
    def spec(self):
        return LayerSpec(self.weights.shape[0], self.weights.shape[1], self.activation)


@dataclass
class MlpModel:
    layers: list

    def __post_init__(self):
        for k, layer in enumerate(self.layers):
            if layer.weights.ndim != 2 or layer.bias.shape != (layer.weights.shape[1],):
                raise ShapeError(f"layer {k}: bias does not match weight columns")
            if k and self.layers[k - 1].weights.shape[1] != layer.weights.shape[0]:
                raise ShapeError(f"layer {k} does not chain onto layer {k - 1}")

    @property
    def specs(self):
        return [layer.spec for layer in self.layers]

    @property
    def n_weights(self):
        return sum(layer.weights.size for layer in self.layers)

    def copy(self, dtype=None):
        dtype = dtype or self.layers[0].weights.dtype
        return MlpModel([
            Layer(l.weights.astype(dtype, copy=True), l.bias.astype(dtype, copy=True), l.activation)
            for l in self.layers
        ])


def build_model(dims=DEFAULT_DIMS, hidden=Activation(RELU), seed=0, output=Activation(IDENTITY)):
    """He-uniform weights, zero biases. Hidden layers share one activation."""
    rng = np.random.default_rng(seed)
    layers = []
    for k, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = math.sqrt(6.0 / n_in)
        w = rng.uniform(-limit, limit, size=(n_in, n_out)).astype(DTYPE)
        act = output if k == len(dims) - 2 else hidden
        layers.append(Layer(w, np.zeros(n_out, dtype=DTYPE), act))
    return MlpModel(layers)


@dataclass
class PruneMask:
    """Per-layer boolean matrices; True = active, False = pruned."""

    layers: list

    @classmethod
    def full(cls, model: MlpModel):
        return cls([np.ones(l.weights.shape, dtype=bool) for l in model.layers])

    def copy(self):
        return PruneMask([m.copy() for m in self.layers])

    @property
    def n_pruned(self):
        return int(sum(m.size - np.count_nonzero(m) for m in self.layers))

    @property
    def n_active(self):
        return int(sum(np.count_nonzero(m) for m in self.layers))

    def check(self, model: MlpModel):
        if len(self.layers) != len(model.layers) or any(
            m.shape != l.weights.shape for m, l in zip(self.layers, model.layers)
        ):
            raise ShapeError("prune mask is not congruent with the model")

    def apply(self, model: MlpModel):
        """Force every pruned weight of ``model`` to exactly 0, in place."""
        for m, layer in zip(self.layers, model.layers):
            layer.weights[~m] = 0


def sparsity(model: MlpModel):
    """Fraction of weights that are exactly zero."""
    zeros = sum(int(np.count_nonzero(l.weights == 0)) for l in model.layers)
    return zeros / model.n_weights


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list  # z per layer, batch x out_dim
    post: list  # a per layer, batch x out_dim

    def layer_input(self, k):
        return self.inputs if k == 0 else self.post[k - 1]


@dataclass(frozen=True)
class LossConfig:
    lambda_rl1: float = 0.0

    def __post_init__(self):
        if self.lambda_rl1 < 0:
            raise InputError("lambda_rl1 must be >= 0")


def masked_weights(layer: Layer, mask: np.ndarray):
    return np.where(mask, layer.weights, layer.weights.dtype.type(0))


def forward(model: MlpModel, mask: PruneMask, batch):
    """Returns ``(logits, trace)``; computation follows the model's dtype."""
    dtype = model.layers[0].weights.dtype
    x = np.asarray(batch, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != model.layers[0].weights.shape[0]:
        raise ShapeError(
            f"batch shape {x.shape} does not fit input dim {model.layers[0].weights.shape[0]}"
        )
    mask.check(model)
    pre, post = [], []
    a = x
    for layer, m in zip(model.layers, mask.layers):
        z = a @ masked_weights(layer, m) + layer.bias
        a = activation_apply(layer.activation, z)
        pre.append(z)
        post.append(a)
    return a, ForwardTrace(x, pre, post)


def predict(model: MlpModel, mask: PruneMask, images, batch_size=2048):
    out = []
    for start in range(0, images.shape[0], batch_size):
        logits, _ = forward(model, mask, images[start:start + batch_size])
        out.append(logits)
    return np.concatenate(out, axis=0)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"{n} logit rows but labels have shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - z[rows, labels]))
    probs = np.exp(z - log_norm[:, None])
    probs[rows, labels] -= 1.0
    return loss, (probs / n).astype(logits.dtype)


def activation_l1(trace: ForwardTrace):
    """Batch mean of the summed absolute hidden activations (logits excluded)."""
    batch = trace.inputs.shape[0]
    total = sum(float(np.abs(a).sum(dtype=np.float64)) for a in trace.post[:-1])
    return total / batch


def regularized_loss(base, trace: ForwardTrace, cfg: LossConfig):
    if cfg.lambda_rl1 == 0:
        return base
    return base + cfg.lambda_rl1 * activation_l1(trace)


@dataclass
class Gradients:
    weights: list
    biases: list


def backward(model: MlpModel, mask: PruneMask, trace: ForwardTrace, dlogits, cfg: LossConfig):
    """Exact gradients of ``regularized_loss(cross_entropy(...))``.

    Gradients at pruned positions are zero.
    """
    n_layers = len(model.layers)
    batch = trace.inputs.shape[0]
    dW = [None] * n_layers
    db = [None] * n_layers
    upstream = np.asarray(dlogits, dtype=trace.inputs.dtype)
    penalty = cfg.lambda_rl1 / batch
    for k in range(n_layers - 1, -1, -1):
        layer, m = model.layers[k], mask.layers[k]
        if k < n_layers - 1 and penalty:
            # d|a|/da with sign(0) = 0
            upstream = upstream + penalty * np.sign(trace.post[k])
        dz = upstream * activation_grad(layer.activation, trace.pre[k])
        x = trace.layer_input(k)
        g = x.T @ dz
        g[~m] = 0
        dW[k] = g
        db[k] = dz.sum(axis=0)
        if k:
            upstream = dz @ masked_weights(layer, m).T
    return Gradients(dW, db)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InputError("Adam betas must lie in [0, 1)")


def _params(model: MlpModel):
    return [l.weights for l in model.layers] + [l.bias for l in model.layers]


def adam_step(state: AdamState, model: MlpModel, grads: Gradients, mask: PruneMask):
    """One bias-corrected Adam update, in place. Pruned weights end at exactly 0."""
    params = _params(model)
    flat = list(grads.weights) + list(grads.biases)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr * math.sqrt(1 - b2 ** state.t) / (1 - b1 ** state.t)
    # folded bias correction: lr * m_hat / (sqrt(v_hat) + eps)
    eps_hat = state.eps_adam * math.sqrt(1 - b2 ** state.t)
    for p, g, m, v in zip(params, flat, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (step * m / (np.sqrt(v) + eps_hat)).astype(p.dtype)
    mask.apply(model)
    return model, state


def train(model: MlpModel, mask: PruneMask, data, epochs=10, lr=1e-3, cfg=LossConfig(),
          seed=0, batch_size=DEFAULT_BATCH_SIZE, log=None):
    """Mini-batch Adam on shuffled batches. Returns a trained copy of ``model``."""
    mask.check(model)
    model = model.copy()
    mask.apply(model)
    if epochs <= 0:
        return model
    state = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        total = 0.0
        for images, labels in dataset.batches(data, batch_size, rng=rng):
            logits, trace = forward(model, mask, images)
            base, dlogits = cross_entropy(logits, labels)
            total += regularized_loss(base, trace, cfg) * len(labels)
            grads = backward(model, mask, trace, dlogits, cfg)
            adam_step(state, model, grads, mask)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {total / len(data):.4f}")
    return model


def fine_tune(model: MlpModel, mask: PruneMask, data, seed=0, lr=1e-4, epochs=1,
              cfg=LossConfig(), batch_size=DEFAULT_BATCH_SIZE):
    """Short retraining with a fresh optimizer state (one epoch at 1e-4 by default)."""
    return train(model, mask, data, epochs=epochs, lr=lr, cfg=cfg, seed=seed,
                 batch_size=batch_size)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"APLB"
VERSION = 1
_ACT_CODES = {name: code for code, name in enumerate(ACTIVATION_NAMES)}
_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<IIBf")


def checkpoint_size(specs):
    """Exact byte size of a checkpoint holding layers of the given specs."""
    size = _HEADER.size
    for s in specs:
        n = s.in_dim * s.out_dim
        size += _LAYER_HEADER.size + 4 * n + 4 * s.out_dim + (n + 7) // 8
    return size


def save_checkpoint(model: MlpModel, mask: PruneMask, path):
    mask.check(model)
    chunks = [_HEADER.pack(MAGIC, VERSION, len(model.layers))]
    for layer, m in zip(model.layers, mask.layers):
        n_in, n_out = layer.weights.shape
        act = layer.activation
        chunks.append(_LAYER_HEADER.pack(n_in, n_out, _ACT_CODES[act.name], act.slope))
        chunks.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
        chunks.append(np.packbits(m.reshape(-1), bitorder="little").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint truncated in header")
    magic, version, n_layers = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = _HEADER.size
    layers, masks = [], []
    codes = {code: name for name, code in _ACT_CODES.items()}

    def take(nbytes):
        nonlocal offset
        if offset + nbytes > len(data):
            raise FormatError("checkpoint truncated")
        chunk = data[offset:offset + nbytes]
        offset += nbytes
        return chunk

    for _ in range(n_layers):
        n_in, n_out, code, slope = _LAYER_HEADER.unpack(take(_LAYER_HEADER.size))
        if code not in codes:
            raise FormatError(f"unknown activation code {code}")
        n = n_in * n_out
        w = np.frombuffer(take(4 * n), dtype="<f4").astype(DTYPE).reshape(n_in, n_out)
        b = np.frombuffer(take(4 * n_out), dtype="<f4").astype(DTYPE)
        bits = np.frombuffer(take((n + 7) // 8), dtype=np.uint8)
        m = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(n_in, n_out)
        name = codes[code]
        # shortest decimal repr undoes the f32 rounding of e.g. 0.01
        act = Activation(name, float(str(np.float32(slope)))) if name == "leaky_relu" else Activation(name)
        layers.append(Layer(w, b, act))
        masks.append(m)
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last layer")
    try:
        model = MlpModel(layers)
    except ShapeError as exc:
        raise FormatError(str(exc)) from exc
    return model, PruneMask(masks)
