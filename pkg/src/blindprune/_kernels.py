"""Compiled inner loop for contribution statistics (optional numba backend)."""

import math

import numba
import numpy as np

# activation codes follow numerics.ACTIVATION_NAMES order
_IDENTITY, _RELU, _LEAKY, _SIGMOID, _TANH = range(5)


@numba.njit(cache=True, nogil=True)
def _activate(v, out, code, slope):
    n = v.shape[0]
    if code == _RELU:
        for j in range(n):
            out[j] = v[j] if v[j] > 0.0 else 0.0
    elif code == _LEAKY:
        for j in range(n):
            out[j] = v[j] if v[j] > 0.0 else v[j] * slope
    elif code == _SIGMOID:
        for j in range(n):
            if v[j] >= 0.0:
                out[j] = 1.0 / (1.0 + math.exp(-v[j]))
            else:
                e = math.exp(v[j])
                out[j] = e / (1.0 + e)
    elif code == _TANH:
        for j in range(n):
            out[j] = math.tanh(v[j])
    else:
        for j in range(n):
            out[j] = v[j]


@numba.njit(cache=True, nogil=True)
def contribution_update(x, w, z, mean, m2, n0, code, slope, eps_div):
    """Welford-accumulate relative contributions for one layer and one batch.

    x: B x I layer inputs, w: I x O masked weights, z: B x O pre-activations.
    ``mean``/``m2`` (I x O) are updated in place; ``n0`` samples were folded
    in before this batch. Both activations go through ``_activate`` so a
    weight of 0 contributes exactly 0.
    """
    n_batch, n_in = x.shape
    n_out = w.shape[1]
    a = np.empty((n_batch, n_out))
    inv_a = np.empty((n_batch, n_out))
    for s in range(n_batch):
        _activate(z[s], a[s], code, slope)
        for j in range(n_out):
            inv_a[s, j] = 1.0 / (abs(a[s, j]) + eps_div)
    zbar = np.empty(n_out)
    abar = np.empty(n_out)
    for i in range(n_in):
        mu = mean[i]
        sq = m2[i]
        wi = w[i]
        for s in range(n_batch):
            xs = x[s, i]
            inv_n = 1.0 / (n0 + s + 1)
            if xs == 0.0:
                # nothing removed: every contribution is exactly 0
                for j in range(n_out):
                    d = -mu[j]
                    mu[j] += d * inv_n
                    sq[j] += d * (0.0 - mu[j])
                continue
            zs = z[s]
            for j in range(n_out):
                zbar[j] = zs[j] - xs * wi[j]
            _activate(zbar, abar, code, slope)
            a_s = a[s]
            r_s = inv_a[s]
            for j in range(n_out):
                v = abs(a_s[j] - abar[j]) * r_s[j]
                d = v - mu[j]
                mu[j] += d * inv_n
                sq[j] += d * (v - mu[j])
