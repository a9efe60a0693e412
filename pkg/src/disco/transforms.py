"""Deterministic parametric domain transforms.

Desk-scale stand-ins for per-task style shifts. Every transform is a pure
function of (samples, seed, parameters): applying the same transform with the
same seed to the same samples yields bit-identical output. Transforms operate
on the flattened feature axis, so they work for plain feature vectors and for
image tensors alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.ndimage import gaussian_filter1d


class TransformError(ValueError):
    """Unknown transform id or invalid transform input."""


def _as_batch(samples: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 0:
        raise TransformError("samples must have at least one dimension")
    if not np.all(np.isfinite(arr)):
        raise TransformError("samples contain non-finite values")
    shape = arr.shape
    return arr.reshape(shape[0], -1), shape


def _identity(flat: np.ndarray, seed: int, params: Mapping[str, float]) -> np.ndarray:
    return flat.copy()


def _channel_permute(flat: np.ndarray, seed: int, params: Mapping[str, float]) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(flat.shape[1])
    return flat[:, perm]


def _hue_rotate(flat: np.ndarray, seed: int, params: Mapping[str, float]) -> np.ndarray:
    # Rotates each adjacent feature pair by a fixed angle; a cheap orthogonal
    # remix of the feature space. An odd trailing feature is left untouched.
    angle = float(params["angle"])
    out = flat.copy()
    pairs = flat.shape[1] // 2
    if pairs == 0:
        return out
    c, s = np.cos(angle), np.sin(angle)
    a = flat[:, 0 : 2 * pairs : 2]
    b = flat[:, 1 : 2 * pairs : 2]
    out[:, 0 : 2 * pairs : 2] = c * a - s * b
    out[:, 1 : 2 * pairs : 2] = s * a + c * b
    return out


def _gaussian_blur(flat: np.ndarray, seed: int, params: Mapping[str, float]) -> np.ndarray:
    return gaussian_filter1d(flat, sigma=float(params["sigma"]), axis=1, mode="nearest")


def _contrast_invert(flat: np.ndarray, seed: int, params: Mapping[str, float]) -> np.ndarray:
    return 2.0 * float(params["center"]) - flat


def _block_shuffle(flat: np.ndarray, seed: int, params: Mapping[str, float]) -> np.ndarray:
    block = int(params["block"])
    if block < 1:
        raise TransformError("block size must be >= 1")
    n = flat.shape[1]
    num_blocks = n // block
    if num_blocks < 2:
        return flat.copy()
    order = np.random.default_rng(seed).permutation(num_blocks)
    head = flat[:, : num_blocks * block].reshape(flat.shape[0], num_blocks, block)
    out = flat.copy()
    out[:, : num_blocks * block] = head[:, order, :].reshape(flat.shape[0], -1)
    return out


_TransformFn = Callable[[np.ndarray, int, Mapping[str, float]], np.ndarray]

_REGISTRY: dict[str, tuple[_TransformFn, dict[str, float]]] = {
    "identity": (_identity, {}),
    "channel_permute": (_channel_permute, {}),
    "hue_rotate": (_hue_rotate, {"angle": 2.0}),
    "gaussian_blur": (_gaussian_blur, {"sigma": 1.0}),
    "contrast_invert": (_contrast_invert, {"center": 0.0}),
    "block_shuffle": (_block_shuffle, {"block": 4}),
}

# Domain tags that commonly label untransformed data.
_IDENTITY_ALIASES = {"real", "none", "original"}


def available_transforms() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def resolve_transform_id(tag: str) -> str | None:
    """Map a domain tag to a registered transform id, if any."""
    if tag in _REGISTRY:
        return tag
    if tag in _IDENTITY_ALIASES:
        return "identity"
    return None


@dataclass(frozen=True)
class DomainTransform:
    """A named deterministic transform with its concrete parameters."""

    transform_id: str
    parameters: Mapping[str, float] = field(default_factory=dict)

    def apply(self, samples: np.ndarray, seed: int) -> np.ndarray:
        """Transform a batch (first axis indexes samples), preserving shape."""
        fn, defaults = _REGISTRY[self.transform_id]
        params = dict(defaults)
        params.update(self.parameters)
        flat, shape = _as_batch(samples)
        return fn(flat, int(seed), params).reshape(shape)


def make_transform(transform_id: str, **parameters: float) -> DomainTransform:
    if transform_id not in _REGISTRY:
        raise TransformError(
            f"unknown transform {transform_id!r}; available: {', '.join(available_transforms())}"
        )
    _, defaults = _REGISTRY[transform_id]
    unknown = set(parameters) - set(defaults)
    if unknown:
        raise TransformError(f"unknown parameters for {transform_id!r}: {sorted(unknown)}")
    return DomainTransform(transform_id, dict(parameters))


def apply_transform(transform_id: str, samples: np.ndarray, seed: int, **parameters: float) -> np.ndarray:
    return make_transform(transform_id, **parameters).apply(samples, seed)
