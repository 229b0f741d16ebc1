"""Elementwise streaming mean/variance (Welford, with Chan's batch merge)."""

import numpy as np


class Welford:
    """Running mean and sum of squared deviations over arrays of a fixed shape."""

    def __init__(self, shape):
        self.count = 0
        self.mean = np.zeros(shape, dtype=np.float64)
        self.m2 = np.zeros(shape, dtype=np.float64)

    def push(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, count, mean, m2):
        """Fold in the summary of another batch of ``count`` samples."""
        if count == 0:
            return
        total = self.count + count
        delta = mean - self.mean
        self.mean += delta * (count / total)
        self.m2 += m2 + delta * delta * (self.count * count / total)
        self.count = total

    def push_batch(self, xs):
        """Fold in samples stacked along axis 0 (two-pass within the batch)."""
        xs = np.asarray(xs, dtype=np.float64)
        mean = xs.mean(axis=0)
        dev = xs - mean
        self.merge(xs.shape[0], mean, np.einsum("b...,b...->...", dev, dev))

    @property
    def variance(self):
        # population variance; a single sample has zero spread
        if self.count == 0:
            return np.zeros_like(self.m2)
        return np.maximum(self.m2, 0) / self.count

    @property
    def std(self):
        return np.sqrt(self.variance)
