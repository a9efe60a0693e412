"""Evaluation analytics over accuracy matrices, parameter snapshots, and logs.

Accuracy-side metrics: per-stage and overall average accuracy, forgetting of
old tasks against the final stage, and initial accuracy (the diagonal mean).
Parameter-side metrics: the Jaccard overlap of high-magnitude update sets
between consecutive task transitions (interference) and that overlap scaled
by the mean update norm (forward-transfer proxy). Prediction-side metrics:
task-inference accuracy and per-task masked-classifier accuracy.

Everything here is a pure, deterministic function of its inputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    """Metric preconditions violated (empty/ragged matrices, size mismatch)."""


# ---------------------------------------------------------------------------
# Accuracy matrices


@dataclass(frozen=True)
class AccuracyMatrix:
    """Lower-triangular a[k][j]: accuracy on task j's test set after task k.

    Row k (1-based) has exactly k entries, each in [0, 100].
    """

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.rows:
            raise MetricError("accuracy matrix has no rows")
        for k, row in enumerate(self.rows, start=1):
            if len(row) != k:
                raise MetricError(f"row {k} must have {k} entries, found {len(row)}")
            for value in row:
                if not np.isfinite(value) or not 0.0 <= value <= 100.0:
                    raise MetricError(f"accuracy {value} in row {k} outside [0, 100]")

    @classmethod
    def coerce(cls, matrix) -> "AccuracyMatrix":
        if isinstance(matrix, cls):
            return matrix
        return cls(rows=tuple(tuple(float(v) for v in row) for row in matrix))

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def entry(self, k: int, j: int) -> float:
        """a_{k,j} with 1-based indices, defined for j <= k."""
        if not 1 <= j <= k <= self.num_tasks:
            raise MetricError(f"entry ({k},{j}) outside the lower triangle")
        return self.rows[k - 1][j - 1]

    def column(self, j: int) -> tuple[float, ...]:
        return tuple(self.rows[k - 1][j - 1] for k in range(j, self.num_tasks + 1))

    @property
    def diagonal(self) -> tuple[float, ...]:
        return tuple(self.rows[k][k] for k in range(self.num_tasks))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            for row in self.rows:
                writer.writerow([repr(v) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "AccuracyMatrix":
        with open(path, newline="", encoding="utf-8") as handle:
            rows = [tuple(float(v) for v in row) for row in csv.reader(handle) if row]
        return cls(rows=tuple(rows))


def average_accuracy(matrix) -> tuple[list[float], float]:
    """Per-stage means AA_k = mean_j<=k a_{k,j} and their overall mean AA."""
    m = AccuracyMatrix.coerce(matrix)
    aa_k = [float(np.mean(row)) for row in m.rows]
    return aa_k, float(np.mean(aa_k))


def forgetting_measure(matrix) -> tuple[list[float], float]:
    """Per-task drop from its best past accuracy to the final stage, and the mean.

    f_j = max_{i < T} a_{i,j} - a_{T,j}, evaluated against the final row.
    Negative values (backward transfer) are preserved as-is.
    """
    m = AccuracyMatrix.coerce(matrix)
    t = m.num_tasks
    if t < 2:
        raise MetricError("forgetting is undefined for a single task")
    final = m.rows[-1]
    f = []
    for j in range(1, t):
        best_past = max(m.entry(i, j) for i in range(j, t))
        f.append(best_past - final[j - 1])
    return f, float(np.mean(f))


def initial_accuracy(matrix) -> float:
    """Mean accuracy of each task right after its own training (diagonal mean)."""
    m = AccuracyMatrix.coerce(matrix)
    return float(np.mean(m.diagonal))


# ---------------------------------------------------------------------------
# Parameter-update interference


@dataclass(frozen=True)
class UpdateProfile:
    """One task transition's flat update, its threshold, and high-update set."""

    delta: np.ndarray
    threshold: float
    high_indices: frozenset[int]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))


def high_magnitude_set(delta: np.ndarray) -> tuple[float, frozenset[int]]:
    """Threshold at the upper quartile of |delta| (linear interpolation
    between order statistics) and the strictly-above index set."""
    d = np.asarray(delta, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise MetricError("update vector must be non-empty and one-dimensional")
    magnitude = np.abs(d)
    threshold = float(np.percentile(magnitude, 75, method="linear"))
    high = frozenset(int(i) for i in np.flatnonzero(magnitude > threshold))
    return threshold, high


def update_profile(delta: np.ndarray) -> UpdateProfile:
    d = np.asarray(delta, dtype=np.float64)
    threshold, high = high_magnitude_set(d)
    return UpdateProfile(delta=d, threshold=threshold, high_indices=high)


def interference_and_transfer(profile_a: UpdateProfile, profile_b: UpdateProfile) -> tuple[float, float]:
    """Jaccard overlap of the two high-update sets, and that overlap scaled
    by the mean of the two update norms. Both sets empty counts as overlap 0."""
    if profile_a.delta.size != profile_b.delta.size:
        raise MetricError(
            f"parameter counts differ: {profile_a.delta.size} vs {profile_b.delta.size}"
        )
    union = profile_a.high_indices | profile_b.high_indices
    if not union:
        overlap = 0.0
    else:
        overlap = len(profile_a.high_indices & profile_b.high_indices) / len(union)
    transfer = overlap * (profile_a.norm + profile_b.norm) / 2.0
    return float(overlap), float(transfer)


def _snapshot_values(snapshot) -> np.ndarray:
    values = getattr(snapshot, "values", snapshot)
    return np.asarray(values, dtype=np.float64)


def piv_pfts(snapshots: Sequence) -> tuple[float, float]:
    """Mean consecutive-transition overlap (as a percentage) and transfer score.

    `snapshots` are the flat extractor parameters s_0..s_T (so T transitions
    and T-1 consecutive transition pairs); at least three snapshots are
    required. Accepts ParameterSnapshot objects or raw vectors.
    """
    vectors = [_snapshot_values(s) for s in snapshots]
    if len(vectors) < 3:
        raise MetricError(f"need at least 3 snapshots (2 transitions), got {len(vectors)}")
    counts = {v.size for v in vectors}
    if len(counts) > 1:
        raise MetricError(f"snapshots disagree on parameter count: {sorted(counts)}")
    profiles = [update_profile(b - a) for a, b in zip(vectors, vectors[1:])]
    overlaps, transfers = [], []
    for prev, cur in zip(profiles, profiles[1:]):
        overlap, transfer = interference_and_transfer(cur, prev)
        overlaps.append(overlap)
        transfers.append(transfer)
    return float(np.mean(overlaps) * 100.0), float(np.mean(transfers))


# ---------------------------------------------------------------------------
# Prediction-side metrics


def task_inference_accuracy(predicted_classes, true_task_ids, scenario) -> float:
    """Share (x100) of predictions landing inside the true task's label set."""
    preds = np.asarray(predicted_classes)
    tasks = np.asarray(true_task_ids)
    if preds.shape != tasks.shape or preds.ndim != 1 or preds.size == 0:
        raise MetricError("predictions and true task ids must be aligned non-empty vectors")
    hits = 0
    for pred, true_task in zip(preds, tasks):
        inferred = scenario.task_of_label(int(pred))  # raises if outside every label set
        hits += int(inferred == int(true_task))
    return 100.0 * hits / preds.size


def masked_argmax_accuracy(
    logits: np.ndarray,
    class_order: Sequence[int],
    allowed_labels: Sequence[int],
    true_labels,
) -> float:
    """Accuracy (x100) of argmax restricted to the classifier rows of
    `allowed_labels`. With all classes allowed this is standard evaluation."""
    scores = np.asarray(logits, dtype=np.float64)
    order = list(class_order)
    if scores.ndim != 2 or scores.shape[1] != len(order):
        raise MetricError("logits must be (N, C) aligned with class_order")
    missing = [c for c in allowed_labels if c not in order]
    if missing:
        raise MetricError(f"classifier has no rows for labels {missing}")
    columns = [order.index(c) for c in allowed_labels]
    picked = np.argmax(scores[:, columns], axis=1)
    preds = np.asarray([allowed_labels[i] for i in picked])
    y = np.asarray(true_labels)
    if y.shape[0] != scores.shape[0]:
        raise MetricError("true labels must align with logits")
    return float(100.0 * np.mean(preds == y))


def intra_task_accuracy(bundle, scenario, j: int, dataset) -> float:
    """Accuracy on task j's test set with the classifier masked to task j's rows."""
    import torch

    from .scenario import materialize_task

    view = materialize_task(scenario, j, dataset, split="test")
    x = torch.as_tensor(np.array(view.samples, copy=True), dtype=torch.float32)
    with torch.no_grad():
        logits = bundle.forward(x).numpy()
    return masked_argmax_accuracy(logits, bundle.classifier.class_ids, list(view.label_set), view.labels)
