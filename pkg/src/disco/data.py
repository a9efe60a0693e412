"""Built-in desk-scale datasets: Gaussian blobs and two moons.

Nothing here downloads anything; real image sets come in through manifests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class ArrayDataset:
    """In-memory dataset with train/test splits and optional class names."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.train_x) != len(self.train_y) or len(self.test_x) != len(self.test_y):
            raise ValueError("sample and label arrays disagree in length")

    def arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        if split == "train":
            return self.train_x, self.train_y
        if split == "test":
            return self.test_x, self.test_y
        raise ValueError(f"unknown split {split!r}")

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted(int(v) for v in np.unique(self.train_y)))

    def name_of(self, label: int) -> str:
        return self.class_names.get(label, f"class {label}")


def gaussian_blobs(
    num_classes: int,
    dim: int,
    train_per_class: int,
    test_per_class: int,
    seed: int,
    center_scale: float = 3.0,
    spread: float = 1.0,
) -> ArrayDataset:
    """Isotropic Gaussian clusters, one per class, with random centers."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=center_scale, size=(num_classes, dim))
    train_x, train_y, test_x, test_y = [], [], [], []
    for label in range(num_classes):
        train_x.append(centers[label] + spread * rng.standard_normal((train_per_class, dim)))
        train_y.append(np.full(train_per_class, label, dtype=np.int64))
        test_x.append(centers[label] + spread * rng.standard_normal((test_per_class, dim)))
        test_y.append(np.full(test_per_class, label, dtype=np.int64))
    return ArrayDataset(
        train_x=np.concatenate(train_x).astype(np.float32),
        train_y=np.concatenate(train_y),
        test_x=np.concatenate(test_x).astype(np.float32),
        test_y=np.concatenate(test_y),
    )


def two_moons(
    train_per_class: int,
    test_per_class: int,
    seed: int,
    noise: float = 0.1,
) -> ArrayDataset:
    """The classic interleaved half-circles, labels {0, 1}."""
    rng = np.random.default_rng(seed)

    def _moons(n: int) -> tuple[np.ndarray, np.ndarray]:
        theta = rng.uniform(0.0, np.pi, size=n)
        upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        theta = rng.uniform(0.0, np.pi, size=n)
        lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        x = np.concatenate([upper, lower]) + noise * rng.standard_normal((2 * n, 2))
        y = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)])
        return x.astype(np.float32), y

    train_x, train_y = _moons(train_per_class)
    test_x, test_y = _moons(test_per_class)
    return ArrayDataset(train_x=train_x, train_y=train_y, test_x=test_x, test_y=test_y)
