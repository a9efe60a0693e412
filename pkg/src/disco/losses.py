"""Contrastive losses: the triplet primitive and its three task variants.

All losses are built on one primitive, a softplus-margin triplet over cosine
similarities. The three variants regularize training from different angles:

* task-level contrast pulls the current batch toward its own running task
  prototype and away from every earlier task's prototype;
* class-level contrast separates classes inside the current batch;
* cross-task contrastive distillation anchors replayed old-class features of
  the student to the frozen teacher while repelling other old classes.

Prototypes and teacher features enter as constants (detached), so gradients
flow only through the live features. Every function is pure given its inputs
and the explicitly passed sampler, so batches may be scored concurrently.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)


class LossInputError(ValueError):
    """Loss inputs violate a precondition (zero vectors, misalignment, ...)."""


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    arr = np.asarray(x)
    if not arr.flags.writeable:  # frozen pool entries; copy to keep torch quiet
        arr = arr.copy()
    return torch.as_tensor(arr, dtype=dtype)


def _safe_norm(x: torch.Tensor, norm_floor: float | None, what: str) -> torch.Tensor:
    norms = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    if norm_floor is not None:
        return norms.clamp_min(norm_floor)
    if bool((norms == 0).any()):
        raise LossInputError(f"zero-norm {what}: cosine similarity undefined (enable a norm floor to smooth)")
    return norms


def cosine_similarity(x, y, norm_floor: float | None = None) -> torch.Tensor:
    """x.y / (|x||y|) over the last axis; zero vectors are rejected."""
    xt = _as_tensor(x)
    yt = _as_tensor(y, like=xt)
    xn = xt / _safe_norm(xt, norm_floor, "vector")
    yn = yt / _safe_norm(yt, norm_floor, "vector")
    return (xn * yn).sum(dim=-1)


def triplet(anchor, positive, negative, norm_floor: float | None = None) -> torch.Tensor:
    """softplus(1 - S(a, p) + S(a, n)): zero only as margins saturate."""
    a = _as_tensor(anchor)
    s_pos = cosine_similarity(a, positive, norm_floor)
    s_neg = cosine_similarity(a, negative, norm_floor)
    return F.softplus(1.0 - s_pos + s_neg)


def tcon(
    anchors: torch.Tensor,
    batch_prototype,
    previous_prototypes: Sequence | torch.Tensor | np.ndarray,
    norm_floor: float | None = None,
) -> torch.Tensor:
    """Task-level contrast: mean triplet over N anchors x (t-1) old prototypes.

    The batch prototype is the positive, every earlier task prototype is a
    negative; both enter detached. With no previous tasks the loss is
    exactly zero.
    """
    if anchors.ndim != 2 or anchors.shape[0] == 0:
        raise LossInputError(f"anchors must be a non-empty (N, d) block, got shape {tuple(anchors.shape)}")
    if isinstance(previous_prototypes, (list, tuple)):
        if len(previous_prototypes) == 0:
            return anchors.new_zeros(())
        negatives = torch.stack([_as_tensor(p, like=anchors) for p in previous_prototypes])
    else:
        negatives = _as_tensor(previous_prototypes, like=anchors)
        if negatives.ndim == 1:
            negatives = negatives[None, :]
        if negatives.shape[0] == 0:
            return anchors.new_zeros(())
    negatives = negatives.detach()
    positive = _as_tensor(batch_prototype, like=anchors).detach()

    a_unit = anchors / _safe_norm(anchors, norm_floor, "anchor")
    p_unit = positive / _safe_norm(positive, norm_floor, "batch prototype")
    n_unit = negatives / _safe_norm(negatives, norm_floor, "previous prototype")
    s_pos = a_unit @ p_unit  # (N,)
    s_neg = a_unit @ n_unit.t()  # (N, t-1)
    return F.softplus(1.0 - s_pos[:, None] + s_neg).mean()


def ccon(
    features: torch.Tensor,
    labels,
    rng: np.random.Generator,
    norm_floor: float | None = None,
) -> torch.Tensor:
    """Class-level contrast with one sampled positive/negative pair per anchor.

    An anchor is eligible when the batch holds another sample of its class
    and at least one sample of a different class; pairs are drawn from the
    passed generator (one positive draw then one negative draw per eligible
    anchor, in batch order). Degenerate batches yield zero.
    """
    if features.ndim != 2 or features.shape[0] == 0:
        raise LossInputError(f"features must be a non-empty (N, d) block, got shape {tuple(features.shape)}")
    y = np.asarray(labels)
    if y.shape[0] != features.shape[0]:
        raise LossInputError("labels must align with features")
    terms = []
    for j in range(features.shape[0]):
        same = np.flatnonzero((y == y[j]) & (np.arange(y.shape[0]) != j))
        diff = np.flatnonzero(y != y[j])
        if same.size == 0 or diff.size == 0:
            continue
        p = int(rng.choice(same))
        n = int(rng.choice(diff))
        terms.append(triplet(features[j], features[p], features[n], norm_floor))
    if not terms:
        logger.debug("class-level contrast skipped: no anchor has both a positive and a negative peer")
        return features.new_zeros(())
    return torch.stack(terms).mean()


def ccd(
    teacher_features,
    student_features: torch.Tensor,
    labels,
    reduction: str = "mean",
    norm_floor: float | None = None,
) -> torch.Tensor:
    """Cross-task contrastive distillation over a replayed old-class batch.

    For every ordered pair (j, k) with different labels, the student feature
    of j is pulled toward the (frozen) teacher feature of j and pushed from
    the student feature of k. `reduction` is "mean" over valid pairs
    (default, keeps the weight meaningful across batch sizes) or "sum" (the
    literal double sum). Fewer than two classes yield zero.
    """
    if reduction not in ("mean", "sum"):
        raise LossInputError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    if student_features.ndim != 2:
        raise LossInputError("student features must be an (R, d) block")
    teacher = _as_tensor(teacher_features, like=student_features).detach()
    if teacher.shape != student_features.shape:
        raise LossInputError(
            f"teacher and student features misaligned: {tuple(teacher.shape)} vs {tuple(student_features.shape)}"
        )
    y = np.asarray(labels)
    if y.shape[0] != student_features.shape[0]:
        raise LossInputError("labels must align with the replay batch")
    valid = torch.as_tensor(y[:, None] != y[None, :])
    if not bool(valid.any()):
        return student_features.new_zeros(())
    s_unit = student_features / _safe_norm(student_features, norm_floor, "student feature")
    t_unit = teacher / _safe_norm(teacher, norm_floor, "teacher feature")
    s_pos = (s_unit * t_unit).sum(dim=-1)  # S(x'_j, x_j), shape (R,)
    s_neg = s_unit @ s_unit.t()  # S(x'_j, x'_k), shape (R, R)
    losses = F.softplus(1.0 - s_pos[:, None] + s_neg)
    picked = losses[valid]
    return picked.mean() if reduction == "mean" else picked.sum()


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three contrastive terms on top of the baseline loss."""

    tcon: float = 0.5
    ccon: float = 0.5
    ccd: float = 1.0

    def __post_init__(self) -> None:
        for name in ("tcon", "ccon", "ccd"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise LossInputError(f"lambda_{name} must be finite and >= 0, got {value}")

    @classmethod
    def from_config(cls, config: Mapping) -> "LossWeights":
        return cls(
            tcon=float(config.get("lambda_tcon", 0.5)),
            ccon=float(config.get("lambda_ccon", 0.5)),
            ccd=float(config.get("lambda_ccd", 1.0)),
        )

    def as_config(self) -> dict[str, float]:
        return {"lambda_tcon": self.tcon, "lambda_ccon": self.ccon, "lambda_ccd": self.ccd}

    @property
    def any_active(self) -> bool:
        return self.tcon > 0 or self.ccon > 0 or self.ccd > 0


def total_loss(baseline, tcon_term, ccon_term, ccd_term, weights: LossWeights) -> torch.Tensor:
    """baseline + lambda_tcon*tcon + lambda_ccon*ccon + lambda_ccd*ccd.

    Zero-weight terms are dropped outright, so disabling a term reduces the
    objective to the vanilla baseline bit-for-bit. Non-finite inputs are
    rejected before any backward pass can see them.
    """
    total = _as_tensor(baseline)
    if not bool(torch.isfinite(total).all()):
        raise LossInputError("baseline loss is non-finite")
    for name, term, weight in (
        ("tcon", tcon_term, weights.tcon),
        ("ccon", ccon_term, weights.ccon),
        ("ccd", ccd_term, weights.ccd),
    ):
        if weight == 0:
            continue
        t = _as_tensor(term, like=total)
        if not bool(torch.isfinite(t).all()):
            raise LossInputError(f"{name} term is non-finite")
        total = total + weight * t
    return total
