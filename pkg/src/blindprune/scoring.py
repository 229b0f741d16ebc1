"""Per-weight importance scores.

The contribution of weight ``(i, j)`` on one sample is the relative change of
node ``j``'s activation when that single weight is removed::

    contribution = |a_j - a_j_without_i| / (|a_j| + eps_div)

Its mean and standard deviation over a data subset are combined into an
importance score; magnitude, Wanda and random scorers serve as baselines.
Every scorer returns one float64 matrix per layer, with pruned positions set
to ``-inf`` so they never rank above active weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import MnistSplit, SubsetSpec
from .errors import InputError
from .network import MlpModel, PruneMask, masked_weights
from .numerics import ACTIVATION_NAMES, activation_apply
from .welford import Welford

EPS_DIV = 1e-8
PRUNED = -np.inf

try:
    from . import _kernels
except ImportError:  # numba missing: fall back to the numpy path
    _kernels = None


@dataclass
class ContributionStats:
    mean: list  # per layer, in_dim x out_dim
    std: list
    count: int

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["layer", "row", "col", "mean", "std", "count"])
            for k, (mean, std) in enumerate(zip(self.mean, self.std)):
                for (i, j), m in np.ndenumerate(mean):
                    writer.writerow([k, i, j, repr(float(m)), repr(float(std[i, j])), self.count])


@dataclass(frozen=True)
class ImportanceConfig:
    alpha: float = 1.0
    beta: float = 1e-7
    eps: float = 1e-4  # much smaller and beta/eps swamps the mean for zero-variance weights
    layer_factor_enabled: bool = True
    layer_factor_base: float = 2.0
    layer_order: str = "input"  # or "output": which end counts as layer 0

    def __post_init__(self):
        if not self.eps > 0:
            raise InputError("importance eps must be > 0")
        if self.layer_order not in ("input", "output"):
            raise InputError("layer_order must be 'input' or 'output'")

    def layer_factor(self, layer, n_layers):
        if not self.layer_factor_enabled:
            return 1.0
        index = layer if self.layer_order == "input" else n_layers - 1 - layer
        return self.layer_factor_base ** index


def _images(data):
    images = data.images if isinstance(data, MnistSplit) else data
    images = np.asarray(images)
    if images.ndim != 2 or images.shape[0] == 0:
        raise InputError("scoring data must be a non-empty 2-D batch")
    return images


def layer_inputs(model: MlpModel, mask: PruneMask, images, batch_size=512):
    """Yield, per batch, the float64 inputs of every layer under the mask."""
    weights = [masked_weights(l, m).astype(np.float64) for l, m in zip(model.layers, mask.layers)]
    biases = [l.bias.astype(np.float64) for l in model.layers]
    for start in range(0, images.shape[0], batch_size):
        a = images[start:start + batch_size].astype(np.float64)
        inputs = []
        for layer, w, b in zip(model.layers, weights, biases):
            inputs.append(a)
            a = activation_apply(layer.activation, a @ w + b)
        yield inputs, weights, biases


def contribution_stats(model: MlpModel, mask: PruneMask, data, eps_div=EPS_DIV,
                       batch_size=256, backend=None) -> ContributionStats:
    """Mean/std of every weight's relative contribution over the samples in ``data``.

    Each layer's output is computed once per batch; removing input ``i`` is
    then a rank-one correction ``z - outer(x[:, i], W[i, :])`` applied to all
    of row ``i`` of the weight matrix at once. ``backend`` is ``"numba"``
    (fused compiled loop, default when available) or ``"numpy"``.
    """
    mask.check(model)
    images = _images(data)
    if backend is None:
        backend = "numba" if _kernels is not None else "numpy"
    if backend == "numba" and _kernels is None:
        raise InputError("numba backend requested but numba is not installed")
    if backend not in ("numba", "numpy"):
        raise InputError(f"unknown backend {backend!r}")
    accs = [Welford(l.weights.shape) for l in model.layers]
    for inputs, weights, biases in layer_inputs(model, mask, images, batch_size):
        for layer, x, w, b, acc in zip(model.layers, inputs, weights, biases, accs):
            z = x @ w + b
            if backend == "numba":
                code = ACTIVATION_NAMES.index(layer.activation.name)
                _kernels.contribution_update(x, w, z, acc.mean, acc.m2, acc.count, code,
                                             float(layer.activation.slope), eps_div)
                acc.count += x.shape[0]
            else:
                a = activation_apply(layer.activation, z)
                inv_a = 1.0 / (np.abs(a) + eps_div)
                _contribution_numpy(layer.activation, x, w, z, a, inv_a, acc)
    return ContributionStats([acc.mean for acc in accs], [acc.std for acc in accs],
                             accs[0].count)


def _contribution_numpy(activation, x, w, z, a, inv_a, acc, chunk=16):
    n_in = w.shape[0]
    count = x.shape[0]
    mean = np.empty_like(w)
    m2 = np.empty_like(w)
    for i0 in range(0, n_in, chunk):
        i1 = min(i0 + chunk, n_in)
        # batch x chunk x out: activation with each input row i removed
        zbar = z[:, None, :] - x[:, i0:i1, None] * w[None, i0:i1, :]
        abar = activation_apply(activation, zbar)
        contrib = np.abs(a[:, None, :] - abar) * inv_a[:, None, :]
        mu = contrib.mean(axis=0)
        contrib -= mu
        mean[i0:i1] = mu
        m2[i0:i1] = np.einsum("bij,bij->ij", contrib, contrib)
    acc.merge(count, mean, m2)


def contribution_stats_naive(model: MlpModel, mask: PruneMask, data,
                             eps_div=EPS_DIV) -> ContributionStats:
    """Reference path: zero one weight at a time and rerun that layer. Small models only."""
    mask.check(model)
    images = _images(data)
    accs = [Welford(l.weights.shape) for l in model.layers]
    for s in range(images.shape[0]):
        x = images[s:s + 1].astype(np.float64)
        for layer, m, acc in zip(model.layers, mask.layers, accs):
            w = masked_weights(layer, m).astype(np.float64)
            b = layer.bias.astype(np.float64)
            a = activation_apply(layer.activation, x @ w + b)[0]
            sample = np.zeros_like(w)
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    if not m[i, j]:
                        continue
                    reduced = w.copy()
                    reduced[i, j] = 0.0
                    abar = activation_apply(layer.activation, x @ reduced + b)[0, j]
                    sample[i, j] = abs(a[j] - abar) / (abs(a[j]) + eps_div)
            acc.push(sample)
            x = a[None, :]
    return ContributionStats([acc.mean for acc in accs], [acc.std for acc in accs],
                             accs[0].count)


def importance(stats: ContributionStats, cfg: ImportanceConfig, mask: PruneMask = None):
    """``s_l * (alpha * mean + beta / (eps + std))`` per weight; pruned -> -inf."""
    n_layers = len(stats.mean)
    scores = []
    for k, (mean, std) in enumerate(zip(stats.mean, stats.std)):
        s = cfg.layer_factor(k, n_layers)
        score = s * (cfg.alpha * mean + cfg.beta / (cfg.eps + std))
        scores.append(_sentinel(score, mask, k))
    return scores


def _sentinel(score, mask, k):
    score = np.asarray(score, dtype=np.float64)
    if mask is not None:
        score = np.where(mask.layers[k], score, PRUNED)
    return score


def magnitude_scores(model: MlpModel, mask: PruneMask):
    mask.check(model)
    return [_sentinel(np.abs(l.weights.astype(np.float64)), mask, k)
            for k, l in enumerate(model.layers)]


def input_norms(model: MlpModel, mask: PruneMask, data, batch_size=512):
    """Euclidean norm over samples of every layer-input feature."""
    mask.check(model)
    images = _images(data)
    sq = [np.zeros(l.weights.shape[0]) for l in model.layers]
    for inputs, _, _ in layer_inputs(model, mask, images, batch_size):
        for acc, x in zip(sq, inputs):
            acc += np.einsum("bi,bi->i", x, x)
    return [np.sqrt(acc) for acc in sq]


def wanda_scores(model: MlpModel, mask: PruneMask, data):
    """``|w_ij| * ||X[:, i]||_2`` with X the layer's inputs over ``data``."""
    norms = input_norms(model, mask, data)
    return [_sentinel(np.abs(l.weights.astype(np.float64)) * norm[:, None], mask, k)
            for k, (l, norm) in enumerate(zip(model.layers, norms))]


def random_scores(model: MlpModel, mask: PruneMask, seed):
    rng = np.random.default_rng(seed)
    return [_sentinel(rng.random(l.weights.shape), mask, k) for k, l in enumerate(model.layers)]


# ---------------------------------------------------------------- scorer kinds

@dataclass(frozen=True)
class Contribution:
    importance: ImportanceConfig = field(default_factory=ImportanceConfig)
    subset: SubsetSpec = field(default_factory=SubsetSpec)
    method = "contribution"
    data_driven = True

    def scores(self, model, mask, data, iteration=0):
        return importance(contribution_stats(model, mask, data), self.importance, mask)

    def describe(self):
        c = self.importance
        return (f"contribution(alpha={c.alpha:g},beta={c.beta:g},"
                f"s={'on' if c.layer_factor_enabled else 'off'},data={self.subset.fraction:g})")


@dataclass(frozen=True)
class Magnitude:
    method = "magnitude"
    data_driven = False

    def scores(self, model, mask, data=None, iteration=0):
        return magnitude_scores(model, mask)

    def describe(self):
        return "magnitude"


@dataclass(frozen=True)
class Wanda:
    subset: SubsetSpec = field(default_factory=SubsetSpec)
    method = "wanda"
    data_driven = True

    def scores(self, model, mask, data, iteration=0):
        return wanda_scores(model, mask, data)

    def describe(self):
        return f"wanda(data={self.subset.fraction:g})"


@dataclass(frozen=True)
class Random:
    seed: int = 0
    method = "random"
    data_driven = False

    def scores(self, model, mask, data=None, iteration=0):
        # fresh draw per iteration, still fixed by the seed
        return random_scores(model, mask, [self.seed, iteration])

    def describe(self):
        return f"random(seed={self.seed})"
