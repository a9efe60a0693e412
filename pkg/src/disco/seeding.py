"""Deterministic derivation of independent random streams from one run seed."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(root: int, *tags: object) -> int:
    """Derive a child seed from a root seed and a tag path.

    Hashes the repr of (root, *tags) with SHA-256, so every named stream is
    reproducible across processes and machines and independent streams never
    share state. Tags must have a stable repr (ints and strings).
    """
    text = repr((int(root),) + tuple(tags))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def stream_rng(root: int, *tags: object) -> np.random.Generator:
    """A NumPy PCG64 generator for the named stream."""
    return np.random.default_rng(derive_seed(root, *tags))
