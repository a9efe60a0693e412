"""Continual training loop: per-task optimization, rehearsal, evaluation.

One run walks the scenario's tasks in order. Each task trains the bundle
with the configured baseline objective (experience replay or feature
distillation) plus the weighted contrastive terms, accumulates the task
prototype batch by batch, and ends by finalizing the prototype, snapshotting
the extractor, refreshing the rehearsal buffer, and freezing a new teacher.

Determinism: every random choice draws from a named stream derived from the
run seed (init / data order / replay / class-contrast sampling / buffer), so
a fixed seed reproduces the accuracy matrix bit-for-bit, and zero-weight
loss terms leave the trajectory of the plain baseline untouched.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .losses import LossInputError, LossWeights, ccd, ccon, tcon, total_loss
from .metrics import AccuracyMatrix
from .model import (
    ModelBundle,
    ParameterSnapshot,
    architecture_hash,
    build_bundle,
    snapshot,
)
from .prototypes import (
    HashedTextEmbedding,
    PrototypeError,
    PrototypePool,
    TextEmbeddingProvider,
    batch_prototype,
    text_prototype,
)
from .scenario import ContinualScenario, materialize_task
from .seeding import stream_rng, derive_seed

logger = logging.getLogger(__name__)

BatchObserver = Callable[[int, str, np.ndarray], None]


class EngineConfigError(ValueError):
    """Training configuration rejected at startup."""


class NonFiniteLossError(RuntimeError):
    """Training aborted because the objective left the finite range."""


@dataclass(frozen=True)
class ArchConfig:
    """Backbone family and layer widths for a run."""

    backbone: str = "mlp"
    hidden_dims: tuple[int, int] = (64, 64)
    feature_dim: int = 32
    contrast_dim: int = 16


@dataclass(frozen=True)
class TrainConfig:
    """Schedule, baseline choice, and contrastive weighting for one run."""

    epochs: int = 100
    milestones: tuple[int, ...] = (60, 80)
    lr: float = 0.1
    lr_decay: float = 0.1
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    baseline: str = "rehearsal-er"
    prototype_mode: str = "image"
    disco: bool = True
    buffer_capacity: int = 200
    distill_weight: float = 1.0
    ccd_reduction: str = "mean"
    norm_floor: float | None = None
    text_embed_dim: int = 32

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise EngineConfigError(f"epochs must be >= 1, got {self.epochs}")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise EngineConfigError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.milestones and self.milestones[-1] >= self.epochs:
            raise EngineConfigError(f"milestones must lie below epochs={self.epochs}, got {self.milestones}")
        if self.batch_size < 1:
            raise EngineConfigError("batch_size must be >= 1")
        if self.baseline not in ("rehearsal-er", "distill-reg"):
            raise EngineConfigError(f"unknown baseline {self.baseline!r}")
        if self.prototype_mode not in ("image", "text"):
            raise EngineConfigError(f"unknown prototype mode {self.prototype_mode!r}")
        if self.baseline == "rehearsal-er" and self.buffer_capacity < 1:
            raise EngineConfigError("rehearsal baseline needs a positive buffer capacity")
        if self.ccd_reduction not in ("mean", "sum"):
            raise EngineConfigError(f"ccd_reduction must be 'mean' or 'sum', got {self.ccd_reduction!r}")
        for name in ("lr", "lr_decay"):
            if getattr(self, name) <= 0 or not math.isfinite(getattr(self, name)):
                raise EngineConfigError(f"{name} must be positive and finite")

    @property
    def uses_rehearsal(self) -> bool:
        return self.baseline == "rehearsal-er"


# ---------------------------------------------------------------------------
# Rehearsal buffer


class RehearsalBuffer:
    """Bounded per-class exemplar store over completed tasks."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise EngineConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.store: dict[int, np.ndarray] = {}

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.store))

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.store.values())

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw up to n exemplars uniformly without replacement."""
        if self.total == 0:
            raise EngineConfigError("cannot sample from an empty buffer")
        xs, ys = [], []
        for label in self.classes:
            xs.append(self.store[label])
            ys.append(np.full(len(self.store[label]), label, dtype=np.int64))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        take = min(n, len(y))
        idx = rng.choice(len(y), size=take, replace=False)
        return x[idx], y[idx]


def update_buffer(
    buffer: RehearsalBuffer,
    view,
    labels: Sequence[int],
    rng: np.random.Generator,
    policy: str = "random",
) -> RehearsalBuffer:
    """Admit a finished task's classes and rebalance to an even per-class quota.

    Existing class lists are truncated to the new quota (keeping their
    earliest exemplars); new classes get a seeded random draw. If the budget
    cannot cover one exemplar per class, the lowest class ids keep one each.
    """
    if policy != "random":
        raise EngineConfigError(f"unknown buffer policy {policy!r}")
    samples = _view_samples(view)
    view_labels = np.asarray(view.labels)
    new_classes = [int(c) for c in labels if int(c) not in buffer.store]
    all_classes = sorted(set(buffer.store) | set(new_classes))
    quota = buffer.capacity // len(all_classes)
    quotas = {c: quota for c in all_classes}
    if quota == 0:
        logger.warning(
            "buffer capacity %d below one exemplar per class (%d classes); keeping one for the lowest ids",
            buffer.capacity,
            len(all_classes),
        )
        quotas = {c: (1 if i < buffer.capacity else 0) for i, c in enumerate(all_classes)}
    for label in list(buffer.store):
        buffer.store[label] = buffer.store[label][: quotas[label]]
    for label in new_classes:
        candidates = np.flatnonzero(view_labels == label)
        if candidates.size == 0:
            raise EngineConfigError(f"task view has no samples for class {label}")
        take = min(quotas[label], candidates.size)
        chosen = rng.choice(candidates, size=take, replace=False)
        buffer.store[label] = samples[chosen].copy()
    for label in [c for c in buffer.store if len(buffer.store[c]) == 0]:
        del buffer.store[label]
    assert buffer.total <= buffer.capacity
    return buffer


# ---------------------------------------------------------------------------
# Teacher


class TeacherHandle:
    """Frozen copy of the bundle at the end of the previous task."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle.frozen_copy()

    @classmethod
    def from_bundle(cls, bundle: ModelBundle) -> "TeacherHandle":
        return cls(bundle)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.bundle.features(x)

    def project(self, features: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.bundle.project(features)

    def param_hash(self) -> str:
        sha = hashlib.sha256()
        for p in self.bundle.trainable_parameters():
            sha.update(p.detach().cpu().numpy().tobytes())
        return sha.hexdigest()


# ---------------------------------------------------------------------------
# Run record


@dataclass
class Predictions:
    """Final-stage per-sample prediction log over every task's test set."""

    true_task: np.ndarray
    true_label: np.ndarray
    pred_class: np.ndarray
    pred_within_task: np.ndarray

    def rows(self):
        return zip(self.true_task, self.true_label, self.pred_class, self.pred_within_task)


@dataclass
class RunRecord:
    """Everything a finished run leaves behind for the metric suite."""

    matrix_rows: list[list[float]]
    snapshots: list[ParameterSnapshot]
    pool: PrototypePool
    predictions: Predictions | None = None
    ita: dict[int, float] = field(default_factory=dict)
    config_hash: str = ""
    arch_hash: str = ""
    feature_files: list[Path] = field(default_factory=list)
    bundle: ModelBundle | None = None

    @property
    def matrix(self) -> AccuracyMatrix:
        return AccuracyMatrix.coerce(self.matrix_rows)


@dataclass
class TaskResult:
    snapshot: ParameterSnapshot
    teacher: TeacherHandle
    steps: int


# ---------------------------------------------------------------------------
# Training


def _view_samples(view) -> np.ndarray:
    """Materialized sample block; path references load as .npy arrays."""
    samples = view.samples
    if isinstance(samples, np.ndarray):
        return samples
    return np.stack([np.load(p) for p in samples])


def _to_tensor(x: np.ndarray) -> torch.Tensor:
    arr = np.asarray(x)
    if not arr.flags.writeable:  # torch warns on tensors sharing read-only buffers
        arr = arr.copy()
    return torch.as_tensor(arr, dtype=torch.float32)


def _epoch_lr(config: TrainConfig, epoch: int) -> float:
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.lr * (config.lr_decay**passed)


def _batch_class_names(labels: np.ndarray, dataset) -> list[str]:
    unique = sorted(int(v) for v in np.unique(labels))
    if hasattr(dataset, "name_of"):
        return [dataset.name_of(v) for v in unique]
    return [f"class {v}" for v in unique]


def train_task(
    bundle: ModelBundle,
    scenario: ContinualScenario,
    t: int,
    dataset,
    buffer: RehearsalBuffer | None,
    pool: PrototypePool,
    teacher: TeacherHandle | None,
    config: TrainConfig,
    text_provider: TextEmbeddingProvider | None = None,
    batch_observer: BatchObserver | None = None,
) -> TaskResult:
    """Train one task in place; returns the post-task snapshot and new teacher."""
    task = scenario.task(t)
    if t >= 2 and teacher is None and (config.baseline == "distill-reg" or (config.disco and config.loss_weights.ccd > 0)):
        raise EngineConfigError(f"task {t} needs a teacher from task {t - 1}")
    view = materialize_task(scenario, t, dataset, split="train")
    x_task = _view_samples(view)
    y_task = np.asarray(view.labels)

    missing = tuple(c for c in task.label_set if c not in bundle.classifier.class_ids)
    if missing:
        bundle.classifier.expand(missing, bundle.expand_generator)

    weights = config.loss_weights
    if config.disco and config.prototype_mode == "text" and text_provider is None:
        text_provider = HashedTextEmbedding(dim=config.text_embed_dim, seed=derive_seed(config.seed, "text-provider"))

    data_rng = stream_rng(config.seed, "data", t)
    replay_rng = stream_rng(config.seed, "replay", t)
    ccon_rng = stream_rng(config.seed, "ccon", t)

    optimizer = torch.optim.SGD(
        bundle.trainable_parameters(),
        lr=config.lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )

    use_replay = config.uses_rehearsal and buffer is not None and buffer.total > 0
    steps = 0
    for epoch in range(1, config.epochs + 1):
        lr = _epoch_lr(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = data_rng.permutation(len(y_task))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            x_cur = _to_tensor(x_task[idx])
            y_cur = y_task[idx]
            if batch_observer is not None:
                batch_observer(t, "task", y_cur)

            feats_cur = bundle.features(x_cur)
            logits_cur = bundle.logits(feats_cur)
            targets_cur = bundle.classifier.index_of(y_cur)

            x_rep = y_rep = feats_rep = None
            if use_replay:
                x_rep_np, y_rep = buffer.sample(min(config.batch_size, buffer.total), replay_rng)
                if batch_observer is not None:
                    batch_observer(t, "replay", y_rep)
                x_rep = _to_tensor(x_rep_np)
                feats_rep = bundle.features(x_rep)

            if config.baseline == "rehearsal-er":
                if feats_rep is not None:
                    logits = torch.cat([logits_cur, bundle.logits(feats_rep)])
                    targets = torch.cat([targets_cur, bundle.classifier.index_of(y_rep)])
                else:
                    logits, targets = logits_cur, targets_cur
                baseline_term = F.cross_entropy(logits, targets)
            else:  # distill-reg
                baseline_term = F.cross_entropy(logits_cur, targets_cur)
                if teacher is not None:
                    baseline_term = baseline_term + config.distill_weight * F.mse_loss(
                        feats_cur, teacher.features(x_cur)
                    )

            tcon_term: torch.Tensor | float = 0.0
            ccon_term: torch.Tensor | float = 0.0
            ccd_term: torch.Tensor | float = 0.0
            try:
                if config.disco:
                    projected = bundle.project(feats_cur)
                    if config.prototype_mode == "image":
                        proto = batch_prototype(projected.detach().cpu().numpy())
                    else:
                        proto = text_prototype(_batch_class_names(y_cur, dataset), text_provider)
                    p_running = pool.accumulate(proto)
                    if weights.tcon > 0:
                        tcon_term = tcon(projected, p_running, pool.previous(t), config.norm_floor)
                    if weights.ccon > 0:
                        ccon_term = ccon(projected, y_cur, ccon_rng, config.norm_floor)
                    if weights.ccd > 0 and teacher is not None and feats_rep is not None:
                        student_proj = bundle.project(feats_rep)
                        teacher_proj = teacher.project(teacher.features(x_rep))
                        ccd_term = ccd(teacher_proj, student_proj, y_rep, config.ccd_reduction, config.norm_floor)
                objective = total_loss(baseline_term, tcon_term, ccon_term, ccd_term, weights)
            except (LossInputError, PrototypeError) as exc:
                terms = ", ".join(
                    f"{name}={float(torch.as_tensor(value).detach()):.6g}"
                    for name, value in (
                        ("baseline", baseline_term),
                        ("tcon", tcon_term),
                        ("ccon", ccon_term),
                        ("ccd", ccd_term),
                    )
                )
                raise NonFiniteLossError(f"task {t}, epoch {epoch}, step {steps}: {exc} ({terms})") from exc

            optimizer.zero_grad()
            objective.backward()
            optimizer.step()
            steps += 1

    if config.disco and pool.batches_seen > 0:
        pool.finalize_task(t)
    if config.uses_rehearsal and buffer is not None:
        update_buffer(buffer, view, task.label_set, stream_rng(config.seed, "buffer", t))
    snap = snapshot(bundle, task_id=t)
    return TaskResult(snapshot=snap, teacher=TeacherHandle.from_bundle(bundle), steps=steps)


# ---------------------------------------------------------------------------
# Evaluation


def _forward_logits(bundle: ModelBundle, samples: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(samples), chunk):
            x = _to_tensor(samples[start : start + chunk])
            out.append(bundle.forward(x).numpy())
    return np.concatenate(out)


def evaluate(bundle: ModelBundle, scenario: ContinualScenario, k: int, dataset) -> list[float]:
    """Accuracy a_{k,j} on each task j <= k, predicting over all seen classes."""
    class_ids = np.asarray(bundle.classifier.class_ids)
    row = []
    for j in range(1, k + 1):
        view = materialize_task(scenario, j, dataset, split="test")
        logits = _forward_logits(bundle, _view_samples(view))
        preds = class_ids[np.argmax(logits, axis=1)]
        row.append(float(100.0 * np.mean(preds == np.asarray(view.labels))))
    return row


def final_predictions(bundle: ModelBundle, scenario: ContinualScenario, dataset) -> Predictions:
    """Per-sample log over all tasks: full-head argmax and own-task-masked argmax."""
    class_ids = list(bundle.classifier.class_ids)
    true_task, true_label, pred_class, pred_within = [], [], [], []
    for j in range(1, scenario.num_tasks + 1):
        view = materialize_task(scenario, j, dataset, split="test")
        logits = _forward_logits(bundle, _view_samples(view))
        full = np.asarray(class_ids)[np.argmax(logits, axis=1)]
        columns = [class_ids.index(c) for c in view.label_set]
        masked = np.asarray(view.label_set)[np.argmax(logits[:, columns], axis=1)]
        true_task.append(np.full(len(view), j, dtype=np.int64))
        true_label.append(np.asarray(view.labels))
        pred_class.append(full)
        pred_within.append(masked)
    return Predictions(
        true_task=np.concatenate(true_task),
        true_label=np.concatenate(true_label),
        pred_class=np.concatenate(pred_class),
        pred_within_task=np.concatenate(pred_within),
    )


def intra_task_from_predictions(predictions: Predictions) -> dict[int, float]:
    ita = {}
    for j in sorted(set(int(v) for v in predictions.true_task)):
        mask = predictions.true_task == j
        ita[j] = float(100.0 * np.mean(predictions.pred_within_task[mask] == predictions.true_label[mask]))
    return ita


def dump_features(
    bundle: ModelBundle,
    scenario: ContinualScenario,
    k: int,
    dataset,
    path: str | Path,
    projected: bool = True,
) -> Path:
    """Write (feature..., label, task) rows for every test sample of tasks 1..k."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    dim = bundle.contrast_dim if projected else bundle.feature_dim
    for j in range(1, k + 1):
        view = materialize_task(scenario, j, dataset, split="test")
        with torch.no_grad():
            feats = bundle.features(_to_tensor(_view_samples(view)))
            if projected:
                feats = bundle.project(feats)
        arr = feats.numpy()
        for vec, label in zip(arr, view.labels):
            rows.append(",".join(repr(float(v)) for v in vec) + f",{int(label)},{j}")
    header = ",".join(f"f{i}" for i in range(dim)) + ",label,task"
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Full run


def run_all(
    scenario: ContinualScenario,
    dataset,
    config: TrainConfig,
    arch: ArchConfig = ArchConfig(),
    text_provider: TextEmbeddingProvider | None = None,
    feature_dir: str | Path | None = None,
    feature_mode: str = "projected",
    batch_observer: BatchObserver | None = None,
    config_hash: str = "",
) -> RunRecord:
    """Train the whole task sequence and collect every run artifact."""
    probe = materialize_task(scenario, 1, dataset, split="train")
    input_shape = tuple(_view_samples(probe).shape[1:])
    contrast_dim = arch.contrast_dim
    if config.disco and config.prototype_mode == "text":
        if text_provider is None:
            text_provider = HashedTextEmbedding(dim=config.text_embed_dim, seed=derive_seed(config.seed, "text-provider"))
        contrast_dim = text_provider.dim
    bundle = build_bundle(
        arch.backbone,
        input_shape,
        arch.feature_dim,
        contrast_dim,
        seed=derive_seed(config.seed, "init"),
        hidden_dims=arch.hidden_dims,
    )
    buffer = RehearsalBuffer(config.buffer_capacity) if config.uses_rehearsal else None
    pool = PrototypePool()
    teacher: TeacherHandle | None = None
    snapshots = [snapshot(bundle, task_id=0)]
    rows: list[list[float]] = []
    feature_files: list[Path] = []

    for t in range(1, scenario.num_tasks + 1):
        result = train_task(
            bundle,
            scenario,
            t,
            dataset,
            buffer,
            pool,
            teacher,
            config,
            text_provider=text_provider,
            batch_observer=batch_observer,
        )
        teacher = result.teacher
        snapshots.append(result.snapshot)
        rows.append(evaluate(bundle, scenario, t, dataset))
        if feature_dir is not None and feature_mode in ("projected", "raw"):
            out = Path(feature_dir) / f"after_task_{t}.csv"
            feature_files.append(
                dump_features(bundle, scenario, t, dataset, out, projected=feature_mode == "projected")
            )

    predictions = final_predictions(bundle, scenario, dataset)
    return RunRecord(
        matrix_rows=rows,
        snapshots=snapshots,
        pool=pool,
        predictions=predictions,
        ita=intra_task_from_predictions(predictions),
        config_hash=config_hash,
        arch_hash=architecture_hash(bundle.backbone),
        feature_files=feature_files,
        bundle=bundle,
    )
