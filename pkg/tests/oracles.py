"""Independent brute-force oracles used to check the package's fast paths.

Everything here is written as literal loops over definitions, on purpose:
these implementations stay separate from the code they verify.
"""

from __future__ import annotations

import math

import numpy as np


def brute_cosine(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.dot(x, y) / (math.sqrt(np.dot(x, x)) * math.sqrt(np.dot(y, y))))


def brute_triplet(a, p, n) -> float:
    margin = 1.0 - brute_cosine(a, p) + brute_cosine(a, n)
    return math.log(1.0 + math.exp(margin))


def brute_tcon(anchors, batch_proto, previous) -> float:
    anchors = np.asarray(anchors, dtype=np.float64)
    previous = [np.asarray(p, dtype=np.float64) for p in previous]
    if not previous:
        return 0.0
    total = 0.0
    for j in range(anchors.shape[0]):
        for neg in previous:
            total += brute_triplet(anchors[j], batch_proto, neg)
    return total / (anchors.shape[0] * len(previous))


def brute_ccd(teacher, student, labels, reduction="mean") -> float:
    teacher = np.asarray(teacher, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    labels = np.asarray(labels)
    total, pairs = 0.0, 0
    for j in range(len(labels)):
        for k in range(len(labels)):
            if labels[k] != labels[j]:
                total += brute_triplet(student[j], teacher[j], student[k])
                pairs += 1
    if pairs == 0:
        return 0.0
    return total / pairs if reduction == "mean" else total


def fd_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus.flat[i] += step
        minus.flat[i] -= step
        grad.flat[i] = (fn(plus) - fn(minus)) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def brute_average_accuracy(rows) -> tuple[list[float], float]:
    aa_k = []
    for k, row in enumerate(rows, start=1):
        total = 0.0
        for j in range(k):
            total += row[j]
        aa_k.append(total / k)
    return aa_k, sum(aa_k) / len(aa_k)


def brute_forgetting(rows) -> tuple[list[float], float]:
    t = len(rows)
    f = []
    for j in range(1, t):  # 1-based old-task index
        best = -math.inf
        for i in range(j, t):  # rows where a_{i,j} exists, before the final one
            best = max(best, rows[i - 1][j - 1])
        f.append(best - rows[t - 1][j - 1])
    return f, sum(f) / len(f)


def brute_initial_accuracy(rows) -> float:
    diag = [rows[i][i] for i in range(len(rows))]
    return sum(diag) / len(diag)


def brute_percentile_75(values) -> float:
    """Linear interpolation between order statistics at q = 0.75."""
    ordered = sorted(float(v) for v in values)
    pos = 0.75 * (len(ordered) - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    frac = pos - lo
    return ordered[lo] + frac * (ordered[hi] - ordered[lo])
