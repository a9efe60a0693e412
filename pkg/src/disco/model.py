"""Decoupled feature-extractor / projector / classifier bundle.

The feature extractor maps inputs to R^D, the projector maps features into
the R^d contrast space, and the classifier grows one row per class as tasks
arrive. Flat snapshots of the extractor parameters feed the interference
analytics; their coordinate order is canonical (sorted parameter names), a
function of the architecture alone.
"""

from __future__ import annotations

import copy
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn


class ModelError(ValueError):
    """Invalid model construction or use."""


# ---------------------------------------------------------------------------
# Backbones


class MLPBackbone(nn.Module):
    """3-layer MLP over flattened inputs."""

    def __init__(self, input_dim: int, hidden_dims: tuple[int, int] = (128, 128), feature_dim: int = 64):
        super().__init__()
        h1, h2 = hidden_dims
        self.net = nn.Sequential(
            nn.Linear(input_dim, h1),
            nn.ReLU(),
            nn.Linear(h1, h2),
            nn.ReLU(),
            nn.Linear(h2, feature_dim),
        )
        self.feature_dim = feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x.reshape(x.shape[0], -1))


class SmallCNN(nn.Module):
    """4-layer convolutional backbone for small images."""

    def __init__(self, in_channels: int = 1, feature_dim: int = 64):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(in_channels, 16, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(64, feature_dim, 3, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.feature_dim = feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x).reshape(x.shape[0], -1)


class IncrementalClassifier(nn.Module):
    """Linear head whose rows are keyed by class id and appended per task."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.feature_dim = feature_dim
        self.class_ids: tuple[int, ...] = ()
        self.weight = nn.Parameter(torch.zeros(0, feature_dim))
        self.bias = nn.Parameter(torch.zeros(0))

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if not self.class_ids:
            raise ModelError("classifier has no classes yet; expand it first")
        return features @ self.weight.t() + self.bias

    def index_of(self, labels: torch.Tensor | np.ndarray) -> torch.Tensor:
        lookup = {c: i for i, c in enumerate(self.class_ids)}
        try:
            idx = [lookup[int(v)] for v in labels]
        except KeyError as exc:
            raise ModelError(f"label {exc.args[0]} not present in classifier head") from None
        return torch.as_tensor(idx, dtype=torch.long)

    def expand(self, new_labels: tuple[int, ...], generator: torch.Generator, init_std: float = 0.01) -> None:
        overlap = set(self.class_ids).intersection(new_labels)
        if overlap:
            raise ModelError(f"classifier already has rows for labels {sorted(overlap)}")
        if len(set(new_labels)) != len(new_labels):
            raise ModelError("new label set contains duplicates")
        rows = torch.empty(len(new_labels), self.feature_dim).normal_(0.0, init_std, generator=generator)
        bias = torch.zeros(len(new_labels))
        self.weight = nn.Parameter(torch.cat([self.weight.data, rows], dim=0))
        self.bias = nn.Parameter(torch.cat([self.bias.data, bias], dim=0))
        self.class_ids = self.class_ids + tuple(int(c) for c in new_labels)


# ---------------------------------------------------------------------------
# Bundle


def _init_module(module: nn.Module, generator: torch.Generator) -> None:
    # Fan-in uniform init drawn from an explicit generator so construction is
    # a pure function of (architecture, seed).
    for sub in module.modules():
        if isinstance(sub, (nn.Linear, nn.Conv2d)):
            fan_in = sub.weight.shape[1] if isinstance(sub, nn.Linear) else int(np.prod(sub.weight.shape[1:]))
            bound = 1.0 / float(np.sqrt(fan_in))
            sub.weight.data.uniform_(-bound, bound, generator=generator)
            if sub.bias is not None:
                sub.bias.data.uniform_(-bound, bound, generator=generator)


class ModelBundle:
    """Feature extractor + projector + growing classifier, one training unit."""

    def __init__(self, backbone: nn.Module, projector: nn.Linear, classifier: IncrementalClassifier, seed: int = 0):
        if projector.in_features != backbone.feature_dim:
            raise ModelError("projector input width must match the backbone feature width")
        if projector.out_features > backbone.feature_dim:
            raise ModelError("contrast dimension d must not exceed the feature dimension D")
        self.backbone = backbone
        self.projector = projector
        self.classifier = classifier
        self.seed = seed
        self.expand_generator = torch.Generator().manual_seed(seed)

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    @property
    def contrast_dim(self) -> int:
        return self.projector.out_features

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def project(self, features: torch.Tensor) -> torch.Tensor:
        return self.projector(features)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        return self.classifier(features)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.logits(self.features(x))

    def trainable_parameters(self):
        yield from self.backbone.parameters()
        yield from self.projector.parameters()
        yield from self.classifier.parameters()

    def frozen_copy(self) -> "ModelBundle":
        clone = copy.deepcopy(self)
        for p in clone.trainable_parameters():
            p.requires_grad_(False)
        return clone


def build_bundle(
    arch: str,
    input_shape: tuple[int, ...],
    feature_dim: int,
    contrast_dim: int,
    seed: int,
    hidden_dims: tuple[int, int] = (128, 128),
) -> ModelBundle:
    """Construct a bundle with deterministic, generator-seeded initialization."""
    generator = torch.Generator().manual_seed(seed)
    if arch == "mlp":
        backbone: nn.Module = MLPBackbone(int(np.prod(input_shape)), hidden_dims, feature_dim)
    elif arch == "cnn":
        if len(input_shape) != 3:
            raise ModelError(f"cnn backbone expects (channels, height, width) inputs, got {input_shape}")
        backbone = SmallCNN(input_shape[0], feature_dim)
    else:
        raise ModelError(f"unknown backbone {arch!r}; expected 'mlp' or 'cnn'")
    _init_module(backbone, generator)
    projector = nn.Linear(feature_dim, contrast_dim)
    _init_module(projector, generator)
    classifier = IncrementalClassifier(feature_dim)
    return ModelBundle(backbone, projector, classifier, seed=seed)


# ---------------------------------------------------------------------------
# Snapshots


@dataclass(frozen=True)
class ParameterSnapshot:
    """Flat copy of the feature-extractor parameters after one task."""

    task_id: int
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    @property
    def count(self) -> int:
        return int(self.values.size)


def canonical_param_names(module: nn.Module) -> tuple[str, ...]:
    return tuple(sorted(name for name, _ in module.named_parameters()))


def architecture_hash(module: nn.Module) -> str:
    spec = [(name, tuple(dict(module.named_parameters())[name].shape)) for name in canonical_param_names(module)]
    return hashlib.sha256(repr(spec).encode("utf-8")).hexdigest()[:16]


def snapshot(bundle: ModelBundle, task_id: int = 0) -> ParameterSnapshot:
    """Flatten the extractor parameters, sorted by name, into one vector."""
    params = dict(bundle.backbone.named_parameters())
    flat = [params[name].detach().cpu().numpy().reshape(-1) for name in canonical_param_names(bundle.backbone)]
    return ParameterSnapshot(task_id=task_id, values=np.concatenate(flat).astype(np.float32))


def restore(bundle: ModelBundle, snap: ParameterSnapshot) -> None:
    """Write a snapshot back into the extractor (inverse of `snapshot`)."""
    params = dict(bundle.backbone.named_parameters())
    offset = 0
    with torch.no_grad():
        for name in canonical_param_names(bundle.backbone):
            p = params[name]
            n = p.numel()
            if offset + n > snap.count:
                raise ModelError("snapshot is shorter than the architecture requires")
            chunk = snap.values[offset : offset + n].reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(chunk.copy()))
            offset += n
    if offset != snap.count:
        raise ModelError(f"snapshot has {snap.count} values but the architecture holds {offset}")


def save_snapshot(snap: ParameterSnapshot, path: str | Path, arch_hash: str = "") -> None:
    """Binary: 8-byte little-endian count, then count little-endian float32."""
    path = Path(path)
    values = snap.values.astype("<f4")
    with open(path, "wb") as handle:
        handle.write(struct.pack("<Q", values.size))
        handle.write(values.tobytes())
    sidecar = path.with_suffix(path.suffix + ".txt")
    sidecar.write_text(f"task_id: {snap.task_id}\narch_hash: {arch_hash}\n", encoding="utf-8")


def load_snapshot(path: str | Path) -> ParameterSnapshot:
    path = Path(path)
    with open(path, "rb") as handle:
        (count,) = struct.unpack("<Q", handle.read(8))
        values = np.frombuffer(handle.read(4 * count), dtype="<f4")
    if values.size != count:
        raise ModelError(f"snapshot file {path} truncated: header says {count}, found {values.size}")
    task_id = 0
    sidecar = path.with_suffix(path.suffix + ".txt")
    if sidecar.exists():
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            if line.startswith("task_id:"):
                task_id = int(line.split(":", 1)[1].strip())
    return ParameterSnapshot(task_id=task_id, values=values.astype(np.float32))


# ---------------------------------------------------------------------------
# Prompt pools


@dataclass(frozen=True)
class PromptPool:
    """M key-value prompt pairs with a fixed top-N selection width."""

    keys: np.ndarray  # (M, d)
    prompts: np.ndarray  # (M, L_p, d)
    top_n: int

    def __post_init__(self) -> None:
        if self.keys.ndim != 2:
            raise ModelError("keys must be a (M, d) matrix")
        m = self.keys.shape[0]
        if not 1 <= self.top_n <= m:
            raise ModelError(f"selection width N={self.top_n} must satisfy 1 <= N <= M={m}")
        if self.prompts.shape[0] != m:
            raise ModelError("prompts and keys must pair up one-to-one")
        norms = np.linalg.norm(self.keys, axis=1)
        if np.any(norms == 0):
            raise ModelError("prompt keys must be nonzero for cosine comparison")
        self.keys.setflags(write=False)
        self.prompts.setflags(write=False)

    @property
    def size(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]


def random_prompt_pool(size: int, dim: int, prompt_len: int, top_n: int, seed: int) -> PromptPool:
    rng = np.random.default_rng(seed)
    keys = rng.standard_normal((size, dim))
    prompts = rng.standard_normal((size, prompt_len, dim))
    return PromptPool(keys=keys, prompts=prompts, top_n=top_n)


def select_keys(pool: PromptPool, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per query, the top-N keys by cosine similarity, plus batch frequencies.

    Ties resolve to the lower key index. Returns (indices of shape (B, N),
    counts of shape (M,)).
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries[None, :]
    if queries.shape[1] != pool.dim:
        raise ModelError(f"queries have dimension {queries.shape[1]}, pool keys have {pool.dim}")
    qnorm = np.linalg.norm(queries, axis=1, keepdims=True)
    if np.any(qnorm == 0):
        raise ModelError("zero-norm query has no cosine similarity")
    knorm = np.linalg.norm(pool.keys, axis=1, keepdims=True)
    sims = (queries / qnorm) @ (pool.keys / knorm).T
    order = np.argsort(-sims, axis=1, kind="stable")
    selected = order[:, : pool.top_n]
    counts = np.bincount(selected.reshape(-1), minlength=pool.size)
    return selected, counts
