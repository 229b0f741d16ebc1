"""Histogram entropy, weight-presence mutual information and blind-range occupancy.

All quantities are in nats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .network import MlpModel, PruneMask
from .numerics import activation_apply, activation_grad
from .scoring import _images, layer_inputs

DEFAULT_BINS = 64


@dataclass(frozen=True)
class HistogramEstimator:
    bin_count: int = DEFAULT_BINS
    lo: float = None  # None -> min/max of the samples
    hi: float = None

    def __post_init__(self):
        if self.bin_count < 2:
            raise InputError("histogram needs at least 2 bins")
        if (self.lo is None) != (self.hi is None):
            raise InputError("give both lo and hi, or neither")
        if self.lo is not None and not self.lo < self.hi:
            raise InputError("histogram range needs lo < hi")

    def edges(self, samples):
        """Bin edges, or None when auto range collapses to a point."""
        if self.lo is not None:
            lo, hi = self.lo, self.hi
        else:
            lo, hi = float(np.min(samples)), float(np.max(samples))
            if not hi > lo:
                return None
        return np.linspace(lo, hi, self.bin_count + 1)


def _entropy_on_edges(samples, edges):
    counts, _ = np.histogram(samples, bins=edges)
    width = edges[1] - edges[0]
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p / width)))


def histogram_entropy(samples, est: HistogramEstimator = HistogramEstimator()):
    """Differential entropy ``-sum p_k ln(p_k / width)``.

    Returns ``-inf`` when all samples coincide under an automatic range.
    """
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2:
        raise InputError("entropy estimate needs at least 2 samples")
    edges = est.edges(samples)
    if edges is None:
        return -math.inf
    return _entropy_on_edges(samples, edges)


@dataclass(frozen=True)
class MiEstimate:
    value: float
    h_marginal: float
    h_conditional: float
    sample_count: int
    degenerate: bool = False


def presence_samples(model: MlpModel, mask: PruneMask, data, layer, i, j):
    """Node ``j`` of ``layer`` with weight ``(i, j)`` kept and with it zeroed."""
    images = _images(data)
    act = model.layers[layer].activation
    present, absent = [], []
    for inputs, weights, biases in layer_inputs(model, mask, images):
        x = inputs[layer]
        z = x @ weights[layer][:, j] + biases[layer][j]
        zbar = z - x[:, i] * weights[layer][i, j]
        present.append(activation_apply(act, z))
        absent.append(activation_apply(act, zbar))
    return np.concatenate(present), np.concatenate(absent)


def mi_from_samples(present, absent, est: HistogramEstimator = HistogramEstimator()):
    """``h(pooled) - (h(present) + h(absent)) / 2`` on one shared binning, clamped at 0."""
    present = np.asarray(present, dtype=np.float64)
    absent = np.asarray(absent, dtype=np.float64)
    pooled = np.concatenate([present, absent])
    n = present.size
    if np.array_equal(present, absent):
        # identical conditionals carry no information about presence
        h = histogram_entropy(pooled, est) if pooled.size >= 2 else -math.inf
        return MiEstimate(0.0, h, h, n, degenerate=not math.isfinite(h))
    edges = est.edges(pooled)
    if edges is None:
        return MiEstimate(0.0, -math.inf, -math.inf, n, degenerate=True)
    h_pooled = _entropy_on_edges(pooled, edges)
    h_cond = 0.5 * (_entropy_on_edges(present, edges) + _entropy_on_edges(absent, edges))
    return MiEstimate(max(h_pooled - h_cond, 0.0), h_pooled, h_cond, n)


def mi_weight_presence(model: MlpModel, mask: PruneMask, data, layer, i, j,
                       est: HistogramEstimator = HistogramEstimator()) -> MiEstimate:
    """MI between node ``j``'s output and whether weight ``(i, j)`` is present.

    Presence is a fair binary variable; both conditionals share the pooled
    histogram binning.
    """
    if not mask.layers[layer][i, j]:
        raise InputError(f"weight ({layer}, {i}, {j}) is pruned")
    present, absent = presence_samples(model, mask, data, layer, i, j)
    return mi_from_samples(present, absent, est)


def mi_rank_layer(model: MlpModel, mask: PruneMask, data, layer,
                  est: HistogramEstimator = HistogramEstimator(), sample_cap=1000):
    """MI for every active weight of one layer. Expensive: one estimate per weight.

    Returns a matrix shaped like the layer weights (pruned entries 0) and the
    list of estimates in row-major order of active weights.
    """
    images = _images(data)[:sample_cap]
    w_shape = model.layers[layer].weights.shape
    out = np.zeros(w_shape)
    estimates = []
    # one pass for the layer inputs, then per-weight rank-one corrections
    xs, zs = [], []
    for inputs, weights, biases in layer_inputs(model, mask, images):
        x = inputs[layer]
        xs.append(x)
        zs.append(x @ weights[layer] + biases[layer])
    x = np.concatenate(xs)
    z = np.concatenate(zs)
    w = np.where(mask.layers[layer], model.layers[layer].weights, 0).astype(np.float64)
    act = model.layers[layer].activation
    a = activation_apply(act, z)
    for i in range(w_shape[0]):
        abar_row = activation_apply(act, z - x[:, i:i + 1] * w[i])
        for j in range(w_shape[1]):
            if not mask.layers[layer][i, j]:
                continue
            est_ij = mi_from_samples(a[:, j], abar_row[:, j], est)
            out[i, j] = est_ij.value
            estimates.append(((layer, i, j), est_ij))
    return out, estimates


def write_mi_csv(estimates, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "row", "col", "mi_nats", "h_marginal", "h_conditional"])
        for (layer, i, j), e in estimates:
            writer.writerow([layer, i, j, f"{e.value:.6g}", f"{e.h_marginal:.6g}",
                             f"{e.h_conditional:.6g}"])


def blind_range_occupancy(model: MlpModel, mask: PruneMask, data, tol=1e-6):
    """Per hidden layer, fraction of (sample, node) pre-activations with ``|phi'(z)| <= tol``.

    Saturating activations are covered on both tails since the derivative
    itself is tested.
    """
    images = _images(data)
    n_hidden = len(model.layers) - 1
    hits = np.zeros(n_hidden)
    seen = np.zeros(n_hidden)
    for inputs, weights, biases in layer_inputs(model, mask, images):
        for k in range(n_hidden):
            z = inputs[k] @ weights[k] + biases[k]
            g = activation_grad(model.layers[k].activation, z)
            hits[k] += np.count_nonzero(np.abs(g) <= tol)
            seen[k] += g.size
    return [float(h / s) for h, s in zip(hits, seen)]


def write_occupancy_csv(fractions, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["layer", "fraction"])
        for k, frac in enumerate(fractions):
            writer.writerow([k, f"{frac:.6f}"])
