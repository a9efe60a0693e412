"""Class-incremental task sequences, with optional per-task domain shift.

A scenario is an immutable ordered list of tasks with pairwise-disjoint label
sets. In CIL mode all tasks share one domain; in CILD mode each task carries
its own domain tag and (optionally) a deterministic input transform standing
in for that domain. Scenarios are safe to share across threads.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np
import yaml

from .seeding import derive_seed
from .transforms import DomainTransform, make_transform, resolve_transform_id

SCENARIO_FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Invalid scenario construction or materialization request."""


@dataclass(frozen=True)
class TaskSpec:
    """One task: an ordered label set plus optional domain annotations."""

    task_id: int
    label_set: tuple[int, ...]
    domain_id: str | None = None
    transform_id: str | None = None

    def __post_init__(self) -> None:
        if self.task_id < 1:
            raise ScenarioError(f"task_id must be >= 1, got {self.task_id}")
        if len(self.label_set) == 0:
            raise ScenarioError(f"task {self.task_id} has an empty label set")
        if len(set(self.label_set)) != len(self.label_set):
            raise ScenarioError(f"task {self.task_id} repeats labels within its own set")


@dataclass(frozen=True)
class ContinualScenario:
    """An ordered, validated sequence of class-incremental tasks."""

    tasks: tuple[TaskSpec, ...]
    mode: str = "CIL"
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.tasks:
            raise ScenarioError("a scenario needs at least one task")
        if self.mode not in ("CIL", "CILD"):
            raise ScenarioError(f"mode must be CIL or CILD, got {self.mode!r}")
        seen: set[int] = set()
        for index, task in enumerate(self.tasks, start=1):
            if task.task_id != index:
                raise ScenarioError(f"task ids must run 1..T in order, found {task.task_id} at position {index}")
            overlap = seen.intersection(task.label_set)
            if overlap:
                raise ScenarioError(f"label sets overlap: labels {sorted(overlap)} repeat in task {index}")
            seen.update(task.label_set)
        if self.mode == "CIL":
            transform_ids = {task.transform_id for task in self.tasks}
            if len(transform_ids) > 1:
                raise ScenarioError("CIL scenarios must use one transform for every task")
        else:
            for task in self.tasks:
                if task.domain_id is None:
                    raise ScenarioError(f"CILD task {task.task_id} is missing a domain tag")
            for prev, cur in zip(self.tasks, self.tasks[1:]):
                if prev.domain_id == cur.domain_id:
                    raise ScenarioError(
                        f"CILD requires consecutive tasks in distinct domains; tasks {prev.task_id} and "
                        f"{cur.task_id} both use {cur.domain_id!r}"
                    )

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def task(self, t: int) -> TaskSpec:
        if not 1 <= t <= self.num_tasks:
            raise ScenarioError(f"task index {t} outside 1..{self.num_tasks}")
        return self.tasks[t - 1]

    def cumulative_labels(self, t: int) -> tuple[int, ...]:
        """Union of label sets of tasks 1..t, in task order."""
        self.task(t)
        out: list[int] = []
        for task in self.tasks[:t]:
            out.extend(task.label_set)
        return tuple(out)

    @property
    def all_labels(self) -> tuple[int, ...]:
        return self.cumulative_labels(self.num_tasks)

    def task_of_label(self, label: int) -> int:
        for task in self.tasks:
            if label in task.label_set:
                return task.task_id
        raise ScenarioError(f"label {label} does not belong to any task")

    @property
    def domain_order(self) -> tuple[str | None, ...]:
        return tuple(task.domain_id for task in self.tasks)


def split_even(num_classes: int, num_tasks: int, seed: int) -> ContinualScenario:
    """Split classes 0..num_classes-1 randomly and evenly into num_tasks tasks.

    The class permutation comes from NumPy's PCG64 generator seeded with
    `seed`, so the same inputs regenerate the same scenario everywhere.
    """
    if num_tasks < 1:
        raise ScenarioError(f"num_tasks must be >= 1, got {num_tasks}")
    if num_classes < 1 or num_classes % num_tasks != 0:
        raise ScenarioError(f"num_tasks={num_tasks} does not evenly divide num_classes={num_classes}")
    perm = np.random.default_rng(seed).permutation(num_classes)
    per_task = num_classes // num_tasks
    tasks = tuple(
        TaskSpec(task_id=t + 1, label_set=tuple(int(c) for c in perm[t * per_task : (t + 1) * per_task]))
        for t in range(num_tasks)
    )
    return ContinualScenario(tasks=tasks, mode="CIL", seed=seed)


def split_base_increment(num_classes: int, base: int, increments: int, seed: int) -> ContinualScenario:
    """A large first task of `base` classes, then `increments` even tasks."""
    if base < 1:
        raise ScenarioError(f"base must be >= 1, got {base}")
    if base > num_classes:
        raise ScenarioError(f"base={base} exceeds num_classes={num_classes}")
    if increments < 0:
        raise ScenarioError(f"increments must be >= 0, got {increments}")
    rest = num_classes - base
    if increments == 0:
        if rest != 0:
            raise ScenarioError(f"{rest} classes left over with no increment tasks")
        per_task = 0
    else:
        if rest % increments != 0:
            raise ScenarioError(f"increments={increments} does not evenly divide the remaining {rest} classes")
        per_task = rest // increments
    perm = np.random.default_rng(seed).permutation(num_classes)
    tasks = [TaskSpec(task_id=1, label_set=tuple(int(c) for c in perm[:base]))]
    for k in range(increments):
        lo = base + k * per_task
        tasks.append(TaskSpec(task_id=k + 2, label_set=tuple(int(c) for c in perm[lo : lo + per_task])))
    return ContinualScenario(tasks=tuple(tasks), mode="CIL", seed=seed)


def attach_domains(
    scenario: ContinualScenario,
    domain_order: Sequence[str],
    transform_map: Mapping[str, str | None] | None = None,
) -> ContinualScenario:
    """Assign one distinct domain per task, turning the scenario into CILD.

    Each domain tag maps to a registered input transform: explicitly via
    `transform_map`, otherwise by name (tags like "real" mean no transform,
    i.e. identity). Tags that match nothing get no transform, which is the
    right behaviour for manifest-backed domains.
    """
    if len(domain_order) != scenario.num_tasks:
        raise ScenarioError(
            f"domain order has {len(domain_order)} entries for {scenario.num_tasks} tasks"
        )
    if len(set(domain_order)) != len(domain_order):
        raise ScenarioError(f"domain order contains duplicates: {list(domain_order)}")
    tasks = []
    for task, tag in zip(scenario.tasks, domain_order):
        if transform_map is not None and tag in transform_map:
            transform_id = transform_map[tag]
        else:
            transform_id = resolve_transform_id(tag)
        tasks.append(replace(task, domain_id=tag, transform_id=transform_id))
    return ContinualScenario(tasks=tuple(tasks), mode="CILD", seed=scenario.seed)


def cil_counterpart(scenario: ContinualScenario) -> ContinualScenario:
    """The CIL twin of a CILD scenario: every task in the first task's domain."""
    first = scenario.tasks[0]
    tasks = tuple(
        replace(task, domain_id=first.domain_id, transform_id=first.transform_id)
        for task in scenario.tasks
    )
    return ContinualScenario(tasks=tasks, mode="CIL", seed=scenario.seed)


def strip_domains(scenario: ContinualScenario) -> ContinualScenario:
    tasks = tuple(replace(task, domain_id=None, transform_id=None) for task in scenario.tasks)
    return ContinualScenario(tasks=tasks, mode="CIL", seed=scenario.seed)


# ---------------------------------------------------------------------------
# Dataset manifests


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    domain: str


@dataclass(frozen=True)
class DatasetManifest:
    """Flat listing of (sample path, label, domain) records for one split."""

    records: tuple[ManifestRecord, ...]

    @property
    def labels(self) -> frozenset[int]:
        return frozenset(r.label for r in self.records)

    @property
    def domains(self) -> frozenset[str]:
        return frozenset(r.domain for r in self.records)

    def select(self, labels: Iterable[int], domain: str | None = None) -> tuple[ManifestRecord, ...]:
        wanted = set(labels)
        return tuple(
            r for r in self.records if r.label in wanted and (domain is None or r.domain == domain)
        )


_MANIFEST_HEADER = ["path", "label", "domain"]


def read_manifest(path: str | Path) -> DatasetManifest:
    """Read a `path,label,domain` CSV manifest. The header row is required."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ScenarioError(f"manifest {path} is empty") from None
        if [h.strip() for h in header] != _MANIFEST_HEADER:
            raise ScenarioError(f"manifest {path} must start with header 'path,label,domain', got {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ScenarioError(f"manifest {path} line {lineno}: expected 3 fields, got {len(row)}")
            try:
                label = int(row[1])
            except ValueError:
                raise ScenarioError(f"manifest {path} line {lineno}: label {row[1]!r} is not an integer") from None
            records.append(ManifestRecord(path=row[0], label=label, domain=row[2]))
    return DatasetManifest(records=tuple(records))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_MANIFEST_HEADER)
        for record in manifest.records:
            writer.writerow([record.path, record.label, record.domain])


# ---------------------------------------------------------------------------
# Materialization


@dataclass(frozen=True)
class TaskDatasetView:
    """Read-only slice of a data source restricted to one task."""

    task_id: int
    label_set: tuple[int, ...]
    samples: np.ndarray | tuple[str, ...]
    labels: np.ndarray
    domain_id: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.samples, np.ndarray):
            self.samples.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[tuple[object, int]]:
        for sample, label in zip(self.samples, self.labels):
            yield sample, int(label)


DataSource = Union["DatasetManifest", Mapping[str, DatasetManifest], object]


def _task_transform(task: TaskSpec) -> DomainTransform | None:
    if task.transform_id is None:
        return None
    return make_transform(task.transform_id)


def materialize_task(
    scenario: ContinualScenario,
    t: int,
    source: DataSource,
    split: str = "train",
) -> TaskDatasetView:
    """Yield exactly the samples task t may see: its labels, its domain.

    `source` is either an in-memory array dataset (anything exposing
    ``arrays(split) -> (x, y)``), a DatasetManifest holding one split, or a
    mapping from split name to manifest. Array sources realise a CILD domain
    by applying the task's registered transform, seeded per (scenario seed,
    task), so train and test of one task share one domain realisation.
    """
    if split not in ("train", "test"):
        raise ScenarioError(f"split must be 'train' or 'test', got {split!r}")
    task = scenario.task(t)
    if isinstance(source, Mapping):
        if split not in source:
            raise ScenarioError(f"no manifest provided for split {split!r}")
        source = source[split]
    if isinstance(source, DatasetManifest):
        return _materialize_manifest(scenario, task, source)
    if hasattr(source, "arrays"):
        return _materialize_arrays(scenario, task, source, split)
    raise ScenarioError(f"unsupported data source type: {type(source).__name__}")


def _materialize_manifest(
    scenario: ContinualScenario, task: TaskSpec, manifest: DatasetManifest
) -> TaskDatasetView:
    domain = task.domain_id
    missing = []
    for label in task.label_set:
        if not manifest.select([label], domain):
            missing.append((label, domain))
    if missing:
        gaps = ", ".join(f"(label={lab}, domain={dom!r})" for lab, dom in missing)
        raise ScenarioError(f"source has no samples for: {gaps}")
    records = manifest.select(task.label_set, domain)
    labels = np.asarray([r.label for r in records], dtype=np.int64)
    return TaskDatasetView(
        task_id=task.task_id,
        label_set=task.label_set,
        samples=tuple(r.path for r in records),
        labels=labels,
        domain_id=domain,
    )


def _materialize_arrays(
    scenario: ContinualScenario, task: TaskSpec, dataset: object, split: str
) -> TaskDatasetView:
    x, y = dataset.arrays(split)
    y = np.asarray(y)
    missing = [label for label in task.label_set if not np.any(y == label)]
    if missing:
        gaps = ", ".join(f"(label={lab}, domain={task.domain_id!r})" for lab in missing)
        raise ScenarioError(f"source has no samples for: {gaps}")
    mask = np.isin(y, task.label_set)
    samples = np.asarray(x)[mask]
    labels = y[mask].astype(np.int64)
    transform = _task_transform(task)
    if transform is not None:
        seed = derive_seed(scenario.seed, "domain", task.task_id)
        samples = transform.apply(samples, seed)
    else:
        samples = samples.copy()
    return TaskDatasetView(
        task_id=task.task_id,
        label_set=task.label_set,
        samples=samples,
        labels=labels,
        domain_id=task.domain_id,
    )


# ---------------------------------------------------------------------------
# Serialization


def scenario_to_text(scenario: ContinualScenario) -> str:
    """Stable plain-text form; identical scenarios serialize byte-for-byte."""
    out = io.StringIO()
    out.write(f"scenario_format: {SCENARIO_FORMAT_VERSION}\n")
    out.write(f"seed: {scenario.seed}\n")
    out.write(f"mode: {scenario.mode}\n")
    out.write(f"num_tasks: {scenario.num_tasks}\n")
    out.write("tasks:\n")
    for task in scenario.tasks:
        out.write(f"  - task_id: {task.task_id}\n")
        out.write(f"    labels: [{', '.join(str(c) for c in task.label_set)}]\n")
        out.write(f"    domain: {task.domain_id if task.domain_id is not None else 'null'}\n")
        out.write(f"    transform: {task.transform_id if task.transform_id is not None else 'null'}\n")
    return out.getvalue()


def scenario_from_text(text: str) -> ContinualScenario:
    doc = yaml.safe_load(text)
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a key-value mapping")
    version = doc.get("scenario_format")
    if version != SCENARIO_FORMAT_VERSION:
        raise ScenarioError(f"unsupported scenario_format: {version!r}")
    tasks = []
    for entry in doc.get("tasks", []):
        tasks.append(
            TaskSpec(
                task_id=int(entry["task_id"]),
                label_set=tuple(int(c) for c in entry["labels"]),
                domain_id=entry.get("domain"),
                transform_id=entry.get("transform"),
            )
        )
    return ContinualScenario(tasks=tuple(tasks), mode=doc.get("mode", "CIL"), seed=int(doc.get("seed", 0)))


def save_scenario(scenario: ContinualScenario, path: str | Path) -> None:
    Path(path).write_text(scenario_to_text(scenario), encoding="utf-8")


def load_scenario(path: str | Path) -> ContinualScenario:
    return scenario_from_text(Path(path).read_text(encoding="utf-8"))
