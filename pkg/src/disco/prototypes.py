"""Task prototypes: batch means, momentum accumulation, and the task pool.

A batch prototype is the mean projected feature of one mini-batch (or a text
embedding of the batch's class names). The in-flight accumulator keeps the
running mean over the batch prototypes seen so far in the current task; on
task completion that value is frozen into the pool. Pool entries are used as
contrastive targets only, never trained, so they are stored detached.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .seeding import derive_seed


class PrototypeError(ValueError):
    """Invalid prototype computation or pool bookkeeping."""


class EmbeddingError(RuntimeError):
    """A text-embedding provider failed or returned an unusable vector."""


def batch_prototype(projected_features: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the batch axis of an (N, d) feature block."""
    features = np.asarray(projected_features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise PrototypeError(f"expected a non-empty (N, d) feature block, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise PrototypeError("features contain non-finite values")
    return features.mean(axis=0)


@dataclass(frozen=True)
class MomentumState:
    """Running mean over batch prototypes: (current vector, batches folded in)."""

    vector: np.ndarray
    count: int

    def __post_init__(self) -> None:
        self.vector.setflags(write=False)


def momentum_update(state: MomentumState | None, new_prototype: np.ndarray) -> MomentumState:
    """Fold one more batch prototype into the running mean.

    With i batches seen after the update, the state becomes
    ((i-1)/i) * previous + (1/i) * new, i.e. the plain mean of all batch
    prototypes so far.
    """
    new = np.asarray(new_prototype, dtype=np.float64)
    if new.ndim != 1:
        raise PrototypeError(f"batch prototype must be a vector, got shape {new.shape}")
    if state is None or state.count == 0:
        return MomentumState(vector=new.copy(), count=1)
    if state.vector.shape != new.shape:
        raise PrototypeError(
            f"dimension mismatch: accumulator holds {state.vector.shape[0]}, batch brings {new.shape[0]}"
        )
    i = state.count + 1
    vector = ((i - 1) / i) * state.vector + (1.0 / i) * new
    return MomentumState(vector=vector, count=i)


class PrototypePool:
    """Finalized per-task prototypes plus the in-flight accumulator."""

    def __init__(self) -> None:
        self._store: dict[int, np.ndarray] = {}
        self._state: MomentumState | None = None

    def accumulate(self, batch_proto: np.ndarray) -> np.ndarray:
        """Fold a batch prototype into the current task; returns the running mean."""
        self._state = momentum_update(self._state, batch_proto)
        return self._state.vector

    @property
    def current(self) -> np.ndarray | None:
        return None if self._state is None else self._state.vector

    @property
    def batches_seen(self) -> int:
        return 0 if self._state is None else self._state.count

    def finalize_task(self, task_id: int) -> np.ndarray:
        """Freeze the accumulated mean as this task's prototype and reset."""
        if self._state is None:
            raise PrototypeError(f"cannot finalize task {task_id}: no batches accumulated")
        if task_id in self._store:
            raise PrototypeError(f"task {task_id} already has a finalized prototype")
        value = self._state.vector.copy()
        value.setflags(write=False)
        self._store[task_id] = value
        self._state = None
        return value

    def get(self, task_id: int) -> np.ndarray:
        if task_id not in self._store:
            raise PrototypeError(f"no prototype stored for task {task_id}")
        return self._store[task_id]

    def previous(self, task_id: int) -> list[np.ndarray]:
        """Prototypes of all tasks before `task_id`, in task order."""
        return [self._store[t] for t in sorted(self._store) if t < task_id]

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._store))

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, task_id: int) -> bool:
        return task_id in self._store


# ---------------------------------------------------------------------------
# Text prototypes


class TextEmbeddingProvider(Protocol):
    dim: int

    def embed(self, prompt: str) -> np.ndarray: ...


class HashedTextEmbedding:
    """Offline stand-in for a real text encoder.

    Embeds a prompt as a unit vector drawn from a generator seeded by the
    prompt text, so identical prompts always map to identical vectors and
    any change to the prompt string moves the embedding.
    """

    def __init__(self, dim: int = 128, seed: int = 0):
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.dim = dim
        self.seed = seed

    def embed(self, prompt: str) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, "text-embed", prompt))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)


def task_prompt(class_names: Sequence[str]) -> str:
    """Join class names into the fixed prompt template.

    Note the prompt is order-sensitive: ["a", "b"] and ["b", "a"] give
    different strings and therefore different embeddings.
    """
    if not class_names:
        raise PrototypeError("cannot build a prompt from an empty class list")
    return "a photo of " + " or ".join(class_names)


def text_prototype(class_names: Sequence[str], provider: TextEmbeddingProvider) -> np.ndarray:
    """Embed the class-name prompt; provider failures surface as EmbeddingError."""
    prompt = task_prompt(class_names)
    try:
        vec = np.asarray(provider.embed(prompt), dtype=np.float64)
    except Exception as exc:
        raise EmbeddingError(f"text provider failed on prompt {prompt!r}: {exc}") from exc
    if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
        raise EmbeddingError(f"text provider returned an unusable vector for prompt {prompt!r}")
    return vec


# ---------------------------------------------------------------------------
# Prompt-key prototypes


def prompt_key_prototype(selection_frequencies: np.ndarray, keys: np.ndarray, n: int) -> np.ndarray:
    """Mean of the n most-frequently selected keys; ties break to lower index."""
    freq = np.asarray(selection_frequencies)
    keys = np.asarray(keys, dtype=np.float64)
    if freq.ndim != 1 or keys.ndim != 2 or freq.shape[0] != keys.shape[0]:
        raise PrototypeError("frequencies must align one-to-one with keys")
    if n < 1:
        raise PrototypeError("n must be >= 1")
    nonzero = int(np.count_nonzero(freq))
    if nonzero < n:
        raise PrototypeError(f"only {nonzero} keys were selected; cannot take the top {n}")
    order = np.lexsort((np.arange(freq.shape[0]), -freq))
    chosen = order[:n]
    return keys[chosen].mean(axis=0)


# ---------------------------------------------------------------------------
# Persistence


def save_pool(pool: PrototypePool, path: str | Path) -> None:
    """One snapshot-format record per task, plus a text index of offsets."""
    path = Path(path)
    index_lines = []
    with open(path, "wb") as handle:
        for task_id in pool.task_ids:
            index_lines.append(f"{task_id} {handle.tell()}")
            values = pool.get(task_id).astype("<f4")
            handle.write(struct.pack("<Q", values.size))
            handle.write(values.tobytes())
    path.with_suffix(path.suffix + ".idx").write_text("\n".join(index_lines) + "\n", encoding="utf-8")


def load_pool(path: str | Path) -> PrototypePool:
    path = Path(path)
    index_path = path.with_suffix(path.suffix + ".idx")
    pool = PrototypePool()
    data = path.read_bytes()
    for line in index_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        task_id, offset = (int(v) for v in line.split())
        (count,) = struct.unpack_from("<Q", data, offset)
        values = np.frombuffer(data, dtype="<f4", count=count, offset=offset + 8)
        pool._store[task_id] = values.astype(np.float64)
        pool._store[task_id].setflags(write=False)
    return pool
