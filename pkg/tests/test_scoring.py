import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindprune import scoring
from blindprune.dataset import SubsetSpec
from blindprune.errors import InputError
from blindprune.network import PruneMask, build_model, forward
from blindprune.numerics import Activation
from blindprune.scoring import (
    EPS_DIV,
    Contribution,
    ContributionStats,
    ImportanceConfig,
    Magnitude,
    Random,
    Wanda,
    contribution_stats,
    contribution_stats_naive,
    importance,
    magnitude_scores,
    random_scores,
    wanda_scores,
)

from conftest import single_layer, toy_model, toy_split

ACTS = ["identity", "relu", "leaky_relu", "sigmoid", "tanh"]
BACKENDS = ["numpy"] + (["numba"] if scoring._kernels is not None else [])
X_HAND = np.array([[1.0, 2.0, 3.0]])


@pytest.mark.parametrize("backend", BACKENDS)
def test_hand_example_identity(backend):
    model = single_layer([0.5, 1.0, -0.25], "identity")
    stats = contribution_stats(model, PruneMask.full(model), X_HAND, backend=backend)
    # a = 1.75; removing each weight leaves 1.25, -0.25 and 2.5
    expected = np.array([0.5, 2.0, 0.75]) / (1.75 + EPS_DIV)
    np.testing.assert_allclose(stats.mean[0][:, 0], expected, rtol=1e-12)
    assert stats.mean[0][0, 0] == pytest.approx(0.2857142857, abs=1e-8)
    assert stats.mean[0][1, 0] == pytest.approx(1.1428571429, abs=1e-8)
    np.testing.assert_array_equal(stats.std[0], 0)
    assert stats.count == 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_hand_example_relu_saturates(backend):
    model = single_layer([0.5, 1.0, -0.25], "relu")
    stats = contribution_stats(model, PruneMask.full(model), X_HAND, backend=backend)
    assert stats.mean[0][1, 0] == pytest.approx(1.0, abs=1e-8)
    exact = contribution_stats(model, PruneMask.full(model), X_HAND, eps_div=0.0,
                               backend=backend)
    assert exact.mean[0][1, 0] == 1.0


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_weight_contributes_nothing(backend):
    model = single_layer([0.5, 0.0, -0.25], "sigmoid", bias=0.1)
    x = np.random.default_rng(0).normal(size=(30, 3)) + 1
    stats = contribution_stats(model, PruneMask.full(model), x, backend=backend)
    assert stats.mean[0][1, 0] == 0 and stats.std[0][1, 0] == 0
    assert stats.mean[0][0, 0] > 0


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("act", ACTS)
def test_matches_naive_oracle(act, backend):
    model = toy_model(act, seed=5)
    rng = np.random.default_rng(11)
    mask = PruneMask([rng.random(l.weights.shape) < 0.8 for l in model.layers])
    mask.apply(model)
    x = toy_split(n=20, seed=2).images
    fast = contribution_stats(model, mask, x, batch_size=7, backend=backend)
    slow = contribution_stats_naive(model, mask, x)
    assert fast.count == slow.count == 20
    for k in range(len(model.layers)):
        for a, b in ((fast.mean[k], slow.mean[k]), (fast.std[k], slow.std[k])):
            np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-12 * max(1, np.abs(b).max()))
        assert np.all(fast.mean[k][~mask.layers[k]] == 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_weight_model(backend):
    model = single_layer([0.7], "tanh", bias=-0.2)
    x = np.linspace(-2, 2, 9)[:, None]
    fast = contribution_stats(model, PruneMask.full(model), x, backend=backend)
    w, b = float(np.float32(0.7)), float(np.float32(-0.2))  # stored as float32
    a = np.tanh(w * x[:, 0] + b)
    seq = np.abs(a - np.tanh(b)) / (np.abs(a) + EPS_DIV)
    assert fast.mean[0][0, 0] == pytest.approx(seq.mean(), rel=1e-12)
    assert fast.std[0][0, 0] == pytest.approx(seq.std(), rel=1e-9)
    slow = contribution_stats_naive(model, PruneMask.full(model), x)
    assert slow.mean[0][0, 0] == pytest.approx(seq.mean(), rel=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_all_zero_inputs(backend):
    model = toy_model("sigmoid")
    x = np.zeros((5, 6))
    stats = contribution_stats(model, PruneMask.full(model), x, backend=backend)
    naive = contribution_stats_naive(model, PruneMask.full(model), x)
    np.testing.assert_array_equal(stats.mean[0], 0)
    np.testing.assert_array_equal(naive.mean[0], 0)


def test_empty_data_and_bad_backend():
    model = toy_model()
    with pytest.raises(InputError):
        contribution_stats(model, PruneMask.full(model), np.zeros((0, 6)))
    with pytest.raises(InputError):
        contribution_stats(model, PruneMask.full(model), np.zeros((2, 6)), backend="gpu")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), act=st.sampled_from(ACTS))
def test_contributions_nonnegative_and_backends_agree(seed, act):
    model = toy_model(act, seed=seed % 13)
    x = np.random.default_rng(seed).normal(size=(6, 6))
    mask = PruneMask.full(model)
    results = [contribution_stats(model, mask, x, backend=b) for b in BACKENDS]
    for r in results:
        for m, s in zip(r.mean, r.std):
            assert np.all(m >= 0) and np.all(s >= 0)
    for k in range(len(model.layers)):
        np.testing.assert_allclose(results[0].mean[k], results[-1].mean[k], rtol=1e-9)


def test_stats_csv(tmp_path):
    model = single_layer([0.5, 1.0, -0.25], "identity")
    stats = contribution_stats(model, PruneMask.full(model), X_HAND)
    stats.to_csv(tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert list(rows[0]) == ["layer", "row", "col", "mean", "std", "count"]
    assert len(rows) == 3 and float(rows[1]["mean"]) == stats.mean[0][1, 0]


# ---------------------------------------------------------------- importance

def hand_stats(layers=3):
    shape = (1, 1)
    return ContributionStats([np.full(shape, 0.5)] * layers, [np.full(shape, 0.1)] * layers, 1)


def test_importance_closed_form():
    stats = hand_stats()
    cfg = ImportanceConfig(alpha=1, beta=1e-7, eps=1e-12)
    scores = importance(stats, cfg)
    assert abs(scores[0][0, 0] - 0.500001) <= 1e-9
    assert abs(scores[2][0, 0] - 2.000004) <= 1e-9
    plain = importance(stats, ImportanceConfig(alpha=1, beta=0, layer_factor_enabled=False))
    assert all(s[0, 0] == 0.5 for s in plain)
    reversed_order = importance(stats, ImportanceConfig(beta=0, layer_order="output"))
    assert [s[0, 0] for s in reversed_order] == [2.0, 1.0, 0.5]


def test_importance_masks_pruned():
    model = single_layer([1.0, 2.0])
    mask = PruneMask([np.array([[True], [False]])])
    stats = ContributionStats([np.ones((2, 1))], [np.ones((2, 1))], 3)
    scores = importance(stats, ImportanceConfig(), mask)
    assert scores[0][1, 0] == -np.inf and np.isfinite(scores[0][0, 0])
    with pytest.raises(InputError):
        ImportanceConfig(eps=0)


@settings(max_examples=60, deadline=None)
@given(m=st.floats(0, 1e3), dm=st.floats(1e-3, 10), s=st.floats(0, 1e3), ds=st.floats(1e-3, 10),
       layer=st.integers(0, 2))
def test_importance_monotonicity(m, dm, s, ds, layer):
    cfg = ImportanceConfig(alpha=1.0, beta=1e-3, eps=1e-6)

    def score(mean, std):
        stats = ContributionStats([np.array([[mean]])] * 3, [np.array([[std]])] * 3, 1)
        return importance(stats, cfg)[layer][0, 0]

    assert score(m + dm, s) > score(m, s)
    assert score(m, s + ds) < score(m, s)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), base=st.floats(1.1, 8.0))
def test_importance_scale_and_layer_factor(seed, base):
    rng = np.random.default_rng(seed)
    mean = [rng.random((4, 3)) for _ in range(2)]
    std = [rng.random((4, 3)) for _ in range(2)]
    stats = ContributionStats(mean, std, 5)
    doubled = ContributionStats([2 * m for m in mean], [2 * s for s in std], 5)
    cfg = ImportanceConfig(beta=0.0, layer_factor_base=base)
    for a, b in zip(importance(stats, cfg), importance(doubled, cfg)):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12)
    with_s = importance(stats, ImportanceConfig(beta=1e-3, layer_factor_base=base))
    without = importance(stats, ImportanceConfig(beta=1e-3, layer_factor_enabled=False))
    for a, b in zip(with_s, without):
        np.testing.assert_array_equal(np.argsort(a, axis=None, kind="stable"),
                                      np.argsort(b, axis=None, kind="stable"))


# ---------------------------------------------------------------- baselines

def test_magnitude_examples():
    model = single_layer([-3.0, 0.0, 2.0])
    scores = magnitude_scores(model, PruneMask.full(model))
    np.testing.assert_array_equal(scores[0][:, 0], [3, 0, 2])
    mask = PruneMask([np.array([[True], [True], [False]])])
    assert magnitude_scores(model, mask)[0][2, 0] == -np.inf


def test_magnitude_sort_oracle():
    model = build_model((20, 15), Activation("relu"), seed=3)
    w = model.layers[0].weights.ravel()
    order = sorted(range(w.size), key=lambda n: (abs(float(w[n])), n))
    scores = magnitude_scores(model, PruneMask.full(model))[0].ravel()
    assert list(np.argsort(scores, kind="stable")) == order


def test_wanda_examples():
    model = single_layer([2.0, -1.0, 0.5])
    x = np.array([[3.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    scores = wanda_scores(model, PruneMask.full(model), x)[0][:, 0]
    assert scores[0] == pytest.approx(6.0)
    assert scores[1] == 0
    assert scores[2] == pytest.approx(0.5 * np.sqrt(3))
    with pytest.raises(InputError):
        wanda_scores(model, PruneMask.full(model), np.zeros((0, 3)))


def test_wanda_loop_oracle():
    model = toy_model("tanh", seed=2)
    rng = np.random.default_rng(3)
    mask = PruneMask([rng.random(l.weights.shape) < 0.7 for l in model.layers])
    x = toy_split(n=15).images
    _, trace = forward(model.copy(np.float64), mask, x)
    got = wanda_scores(model, mask, x)
    for k, layer in enumerate(model.layers):
        inputs = trace.layer_input(k)
        for i in range(layer.weights.shape[0]):
            norm = np.sqrt(sum(float(v) ** 2 for v in inputs[:, i]))
            for j in range(layer.weights.shape[1]):
                want = abs(float(layer.weights[i, j])) * norm if mask.layers[k][i, j] else -np.inf
                assert got[k][i, j] == pytest.approx(want, rel=1e-6, abs=1e-12)


def test_random_scores():
    model = build_model((400, 250), Activation("relu"))
    mask = PruneMask.full(model)
    a = random_scores(model, mask, 1)[0]
    np.testing.assert_array_equal(a, random_scores(model, mask, 1)[0])
    assert not np.array_equal(a, random_scores(model, mask, 2)[0])
    assert a.size == 100_000 and abs(a.mean() - 0.5) < 0.01
    assert a.min() >= 0 and a.max() < 1


def test_scorer_kinds():
    model = toy_model()
    rng = np.random.default_rng(0)
    mask = PruneMask([rng.random(l.weights.shape) < 0.5 for l in model.layers])
    mask.apply(model)
    x = toy_split(n=10).images
    kinds = [Contribution(ImportanceConfig(), SubsetSpec(0.5)), Magnitude(), Wanda(), Random(3)]
    for kind in kinds:
        scores = kind.scores(model, mask, x, iteration=1)
        assert isinstance(kind.describe(), str) and kind.method
        for s, m, l in zip(scores, mask.layers, model.layers):
            assert s.shape == l.weights.shape
            assert np.all(s[~m] == -np.inf) and np.all(np.isfinite(s[m]))
    r = Random(3)
    assert not np.array_equal(r.scores(model, mask, None, 1)[0], r.scores(model, mask, None, 2)[0])
