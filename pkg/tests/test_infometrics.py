import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from blindprune.errors import InputError
from blindprune.network import Layer, LossConfig, MlpModel, PruneMask, build_model, train
from blindprune.numerics import Activation
from blindprune.infometrics import (
    HistogramEstimator,
    blind_range_occupancy,
    histogram_entropy,
    mi_from_samples,
    mi_rank_layer,
    mi_weight_presence,
    write_mi_csv,
    write_occupancy_csv,
)
from blindprune.scoring import contribution_stats

from conftest import single_layer, toy_model, toy_split

GAUSS_H = 0.5 * math.log(2 * math.pi * math.e)


def test_entropy_uniform_and_gaussian():
    rng = np.random.default_rng(0)
    assert abs(histogram_entropy(rng.random(100_000))) < 0.05
    assert abs(histogram_entropy(2 * rng.random(100_000)) - math.log(2)) < 0.05
    assert abs(histogram_entropy(rng.standard_normal(100_000)) - GAUSS_H) < 0.05
    assert GAUSS_H == pytest.approx(1.4189385, abs=1e-7)


def test_entropy_fixed_range_and_degenerate():
    samples = np.full(10, 3.0)
    assert histogram_entropy(samples) == -math.inf
    # all mass in one bin of width 1/4
    fixed = histogram_entropy(samples, HistogramEstimator(4, 2.5, 3.5))
    assert fixed == pytest.approx(math.log(0.25))
    with pytest.raises(InputError):
        histogram_entropy([1.0])
    with pytest.raises(InputError):
        HistogramEstimator(1)
    with pytest.raises(InputError):
        HistogramEstimator(8, 1.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 400))
def test_entropy_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    assert histogram_entropy(x) == histogram_entropy(rng.permutation(x))


def test_entropy_converges_with_more_samples():
    errors = {n: [] for n in (2_000, 4_000, 8_000)}
    for seed in range(5):
        rng = np.random.default_rng(seed)
        for n in errors:
            errors[n].append(abs(histogram_entropy(rng.standard_normal(n)) - GAUSS_H))
    means = [np.mean(errors[n]) for n in sorted(errors)]
    assert means[0] > means[1] > means[2]


def test_mi_zero_weight_is_exactly_zero():
    model = single_layer([0.5, 0.0, -1.0], "relu", bias=0.2)
    x = np.random.default_rng(0).normal(size=(500, 3))
    est = mi_weight_presence(model, PruneMask.full(model), x, 0, 1, 0)
    assert est.value == 0.0


def test_mi_constant_node():
    model = single_layer([1.0, 2.0], "relu", bias=-100.0)
    x = np.random.default_rng(1).random((300, 2))
    est = mi_weight_presence(model, PruneMask.full(model), x, 0, 0, 0)
    assert est.value == 0.0 and est.degenerate


def test_mi_synthetic_identity_node():
    model = single_layer([1.0], "identity")
    x = np.random.default_rng(2).random((100_000, 1))
    est = mi_weight_presence(model, PruneMask.full(model), x, 0, 0, 0)
    assert abs(est.value - math.log(2)) < 0.1
    assert est.value == pytest.approx(est.h_marginal - est.h_conditional)
    assert est.sample_count == 100_000


def test_mi_rejects_pruned_weight():
    model = single_layer([1.0, 1.0])
    mask = PruneMask([np.array([[True], [False]])])
    with pytest.raises(InputError):
        mi_weight_presence(model, mask, np.ones((4, 2)), 0, 1, 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(0.0, 3.0))
def test_mi_nonnegative(seed, shift):
    rng = np.random.default_rng(seed)
    est = mi_from_samples(rng.normal(size=300), rng.normal(size=300) + shift)
    assert est.value >= 0


def test_mi_unclamped_noise_is_small():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=10_000), rng.normal(size=10_000)
    est = mi_from_samples(a, b)
    assert est.h_marginal - est.h_conditional >= -0.02


def test_mi_rank_layer_shapes_and_zero_layer(tmp_path):
    model = toy_model("tanh")
    x = toy_split(n=50).images
    matrix, estimates = mi_rank_layer(model, PruneMask.full(model), x, 1, sample_cap=40)
    assert matrix.shape == model.layers[1].weights.shape
    assert len(estimates) == matrix.size and estimates[0][1].sample_count == 40
    single = mi_weight_presence(model, PruneMask.full(model), x[:40], 1, 2, 1)
    assert matrix[2, 1] == pytest.approx(single.value, abs=1e-12)
    model.layers[0].weights[:] = 0
    zeros, _ = mi_rank_layer(model, PruneMask.full(model), x, 0)
    np.testing.assert_array_equal(zeros, 0)
    write_mi_csv(estimates, tmp_path / "mi.csv")
    rows = list(csv.DictReader(open(tmp_path / "mi.csv")))
    assert list(rows[0]) == ["layer", "row", "col", "mi_nats", "h_marginal", "h_conditional"]


def test_mi_ranking_tracks_contribution():
    split = toy_split(n=600, dim=6, classes=3, seed=4)
    model = build_model((6, 12, 3), Activation("tanh"), seed=4)
    model = train(model, PruneMask.full(model), split, epochs=30, lr=1e-2, batch_size=32)
    mask = PruneMask.full(model)
    mi, _ = mi_rank_layer(model, mask, split.images, 0, sample_cap=600)
    stats = contribution_stats(model, mask, split.images)
    rho = spearmanr(mi.ravel(), stats.mean[0].ravel()).statistic
    assert rho > 0.5


def test_occupancy_examples(tmp_path):
    relu = single_layer([1.0], "relu")
    relu = MlpModel(relu.layers + [Layer(np.ones((1, 1), np.float32), np.zeros(1, np.float32),
                                         Activation("identity"))])
    negative = -np.random.default_rng(0).random((50, 1)) - 0.1
    assert blind_range_occupancy(relu, PruneMask.full(relu), negative) == [1.0]
    assert blind_range_occupancy(relu, PruneMask.full(relu), -negative) == [0.0]
    leaky = toy_model("leaky_relu")
    occ = blind_range_occupancy(leaky, PruneMask.full(leaky), toy_split().images, tol=1e-3)
    assert occ == [0.0]
    sig = toy_model("sigmoid", dims=(6, 5, 4, 3))
    occ = blind_range_occupancy(sig, PruneMask.full(sig), 50 * toy_split().images, tol=1e-2)
    assert len(occ) == 2 and occ[0] > 0.5 and all(0 <= f <= 1 for f in occ)
    write_occupancy_csv(occ, tmp_path / "o.csv")
    assert open(tmp_path / "o.csv").read().splitlines()[0] == "layer,fraction"


def test_activation_penalty_raises_occupancy():
    split = toy_split(n=400, dim=6, classes=3, seed=6)
    base = build_model((6, 32, 16, 3), Activation("relu"), seed=6)
    mask = PruneMask.full(base)
    plain = train(base, mask, split, epochs=15, lr=5e-3, batch_size=32, seed=1)
    sparse = train(base, mask, split, epochs=15, lr=5e-3, batch_size=32, seed=1,
                   cfg=LossConfig(0.05))
    a = np.mean(blind_range_occupancy(plain, mask, split.images))
    b = np.mean(blind_range_occupancy(sparse, mask, split.images))
    assert b > a
