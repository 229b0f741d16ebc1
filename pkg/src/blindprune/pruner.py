"""Iterative prune / fine-tune loop driven by any scorer."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import MnistSplit, SubsetSpec, sample_subset
from .errors import InputError
from .network import (
    DEFAULT_BATCH_SIZE,
    LossConfig,
    MlpModel,
    PruneMask,
    fine_tune,
    predict,
)

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["iteration", "sparsity", "accuracy", "method", "data_fraction",
                  "per_iter_ratio", "seed", "seconds"]


@dataclass(frozen=True)
class PruneSchedule:
    target_ratio: float
    per_iter_ratio: float

    def __post_init__(self):
        if not 0 < self.target_ratio < 1:
            raise InputError(f"target ratio must be in (0, 1), got {self.target_ratio}")
        if not 0 < self.per_iter_ratio <= 1:
            raise InputError(f"per-iteration ratio must be in (0, 1], got {self.per_iter_ratio}")

    @property
    def n_iterations(self):
        return math.ceil(self.target_ratio / self.per_iter_ratio - 1e-9)

    def cumulative_counts(self, total):
        """Pruned-weight count after each iteration, for ``total`` prunable weights."""
        final = round(self.target_ratio * total)
        return [min(round(t * self.per_iter_ratio * total), final)
                for t in range(1, self.n_iterations + 1)]


@dataclass
class IterationRecord:
    iteration: int
    sparsity: float
    accuracy: float
    method: str
    data_fraction: float
    per_iter_ratio: float
    seed: int
    seconds: float


@dataclass
class PruneReport:
    records: list = field(default_factory=list)

    @property
    def final(self):
        return self.records[-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(REPORT_COLUMNS)
            for r in self.records:
                writer.writerow([r.iteration, f"{r.sparsity:.6f}", f"{r.accuracy:.4f}", r.method,
                                 f"{r.data_fraction:g}", f"{r.per_iter_ratio:g}", r.seed,
                                 f"{r.seconds:.2f}"])


def select_prune_set(scores, mask: PruneMask, k: int):
    """The ``k`` active weights with the globally smallest scores.

    Returns ``(layer, row, col)`` tuples. Ties go to the lowest
    ``(layer, row, col)``: a stable sort over the row-major concatenation.
    """
    active = mask.n_active
    if k < 0 or k > active:
        raise InputError(f"cannot prune {k} weights, only {active} active")
    if k == 0:
        return []
    flat_scores, flat_active, owners = [], [], []
    for layer, (s, m) in enumerate(zip(scores, mask.layers)):
        flat_scores.append(np.asarray(s, dtype=np.float64).reshape(-1))
        flat_active.append(m.reshape(-1))
        owners.append(np.full(m.size, layer))
    flat_scores = np.concatenate(flat_scores)
    flat_active = np.concatenate(flat_active)
    owners = np.concatenate(owners)
    offsets = np.cumsum([0] + [m.size for m in mask.layers])
    candidates = np.flatnonzero(flat_active)
    order = np.argsort(flat_scores[candidates], kind="stable")[:k]
    chosen = np.sort(candidates[order])
    out = []
    for idx in chosen:
        layer = int(owners[idx])
        row, col = divmod(int(idx - offsets[layer]), mask.layers[layer].shape[1])
        out.append((layer, row, col))
    return out


def extend_mask(mask: PruneMask, prune_set):
    new = mask.copy()
    for layer, row, col in prune_set:
        new.layers[layer][row, col] = False
    return new


def evaluate(model: MlpModel, mask: PruneMask, test: MnistSplit) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    logits = predict(model, mask, test.images)
    return float(np.mean(np.argmax(logits, axis=1) == test.labels))


def prune_iteratively(model: MlpModel, data: MnistSplit, test: MnistSplit,
                      schedule: PruneSchedule, scorer, seed=0, mask=None,
                      fine_tune_lr=1e-4, fine_tune_epochs=1, loss=LossConfig(),
                      batch_size=DEFAULT_BATCH_SIZE, resample_subset=False):
    """Score, prune the globally least important weights, fine-tune; repeat.

    Each iteration prunes up to ``per_iter_ratio`` of the ORIGINAL weight
    count until ``round(target_ratio * total)`` weights are masked. Biases are
    never pruned. Data-driven scorers see ``scorer.subset`` of ``data``;
    fine-tuning uses all of ``data``.
    """
    mask = PruneMask.full(model) if mask is None else mask.copy()
    mask.check(model)
    model = model.copy()
    mask.apply(model)
    total = model.n_weights
    report = PruneReport()
    subset = getattr(scorer, "subset", None)
    fraction = subset.fraction if subset is not None else 1.0
    score_data = None
    if subset is not None and not resample_subset:
        score_data = sample_subset(data, subset)
    for t, target in enumerate(schedule.cumulative_counts(total), start=1):
        started = time.perf_counter()
        if subset is not None and resample_subset:
            score_data = sample_subset(data, SubsetSpec(subset.fraction, subset.seed + t))
        scores = scorer.scores(model, mask, score_data, iteration=t)
        prune_set = select_prune_set(scores, mask, target - mask.n_pruned)
        mask = extend_mask(mask, prune_set)
        mask.apply(model)
        model = fine_tune(model, mask, data, seed=seed * 1000 + t, lr=fine_tune_lr,
                          epochs=fine_tune_epochs, cfg=loss, batch_size=batch_size)
        accuracy = evaluate(model, mask, test)
        record = IterationRecord(t, mask.n_pruned / total, accuracy, scorer.describe(),
                                 fraction, schedule.per_iter_ratio, seed,
                                 time.perf_counter() - started)
        report.records.append(record)
        log.info("iteration %d: sparsity %.4f accuracy %.4f (%.1fs)", t, record.sparsity,
                 accuracy, record.seconds)
    return model, mask, report
