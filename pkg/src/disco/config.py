"""Experiment configuration: plain-text hierarchical key-value documents.

A config resolves to a fully concrete document before any training starts;
resolution is idempotent and the resolved text (stable key order) is what
gets hashed and copied into each run directory.
"""

from __future__ import annotations

import copy
import hashlib
import io
import math
from pathlib import Path
from typing import Any, Mapping

import yaml

CONFIG_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unresolvable experiment configuration."""


DEFAULTS: dict[str, Any] = {
    "format_version": CONFIG_FORMAT_VERSION,
    "name": "experiment",
    "output_root": "runs",
    "seed": 0,
    "seeds": None,
    "scenario": {
        "num_classes": 10,
        "num_tasks": 5,
        "split": "even",
        "base": None,
        "increments": None,
        "seed": None,
        "domain_order": None,
    },
    "dataset": {
        "kind": "blobs",
        "dim": 16,
        "train_per_class": 200,
        "test_per_class": 100,
        "seed": 0,
        "center_scale": 3.0,
        "spread": 1.0,
        "noise": 0.1,
        "train_manifest": None,
        "test_manifest": None,
    },
    "arch": {
        "backbone": "mlp",
        "hidden_dims": [64, 64],
        "feature_dim": 32,
        "contrast_dim": 16,
    },
    "train": {
        "epochs": 10,
        "milestones": [6, 8],
        "lr": 0.05,
        "lr_decay": 0.1,
        "weight_decay": 0.0005,
        "momentum": 0.9,
        "batch_size": 32,
        "baseline": "rehearsal-er",
        "buffer_capacity": 100,
        "prototype_mode": "image",
        "distill_weight": 1.0,
        "text_embed_dim": 32,
    },
    "disco": {
        "enabled": True,
        "lambda_tcon": 0.5,
        "lambda_ccon": 0.5,
        "lambda_ccd": 1.0,
        "ccd_reduction": "mean",
        "norm_floor": None,
    },
    "features": "none",
}

_ENUMS = {
    "scenario.split": ("even", "base_increment"),
    "dataset.kind": ("blobs", "moons", "manifest"),
    "arch.backbone": ("mlp", "cnn"),
    "train.baseline": ("rehearsal-er", "distill-reg"),
    "train.prototype_mode": ("image", "text"),
    "disco.ccd_reduction": ("mean", "sum"),
    "features": ("none", "projected", "raw"),
}


def _merge(defaults: Mapping, overrides: Mapping, path: str = "") -> dict:
    out: dict[str, Any] = {}
    unknown = set(overrides) - set(defaults)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown config keys at {where}: {sorted(unknown)}")
    for key, default in defaults.items():
        here = f"{path}.{key}" if path else key
        if key not in overrides:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, Mapping):
            value = overrides[key]
            if not isinstance(value, Mapping):
                raise ConfigError(f"{here} must be a mapping, got {type(value).__name__}")
            out[key] = _merge(default, value, here)
        else:
            out[key] = overrides[key]
    return out


def _require(condition: bool, message: str, problems: list[str]) -> None:
    if not condition:
        problems.append(message)


def _validate(cfg: dict) -> None:
    problems: list[str] = []
    if cfg["format_version"] != CONFIG_FORMAT_VERSION:
        problems.append(f"format_version: expected {CONFIG_FORMAT_VERSION}, got {cfg['format_version']!r}")
    for dotted, allowed in _ENUMS.items():
        node = cfg
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node[part]
        if node[leaf] not in allowed:
            problems.append(f"{dotted}: {node[leaf]!r} not one of {allowed}")
    sc = cfg["scenario"]
    _require(int(sc["num_classes"]) >= 1, "scenario.num_classes must be >= 1", problems)
    if sc["split"] == "even":
        _require(int(sc["num_tasks"]) >= 1, "scenario.num_tasks must be >= 1", problems)
    else:
        _require(sc["base"] is not None and sc["increments"] is not None,
                 "scenario.base and scenario.increments are required for base_increment splits", problems)
    if sc["domain_order"] is not None:
        _require(isinstance(sc["domain_order"], (list, tuple)),
                 "scenario.domain_order must be a list of domain tags", problems)
    tr = cfg["train"]
    _require(int(tr["epochs"]) >= 1, "train.epochs must be >= 1", problems)
    _require(int(tr["batch_size"]) >= 1, "train.batch_size must be >= 1", problems)
    milestones = list(tr["milestones"])
    _require(milestones == sorted(set(milestones)), "train.milestones must be strictly increasing", problems)
    _require(not milestones or milestones[-1] < int(tr["epochs"]),
             "train.milestones must all lie below train.epochs", problems)
    if tr["baseline"] == "rehearsal-er":
        _require(int(tr["buffer_capacity"]) >= 1,
                 "train.buffer_capacity must be >= 1 for the rehearsal baseline", problems)
    dc = cfg["disco"]
    for key in ("lambda_tcon", "lambda_ccon", "lambda_ccd"):
        value = float(dc[key])
        _require(math.isfinite(value) and value >= 0, f"disco.{key} must be finite and >= 0", problems)
    if cfg["seeds"] is not None:
        _require(isinstance(cfg["seeds"], (list, tuple)) and len(cfg["seeds"]) >= 1,
                 "seeds must be a non-empty list of integers", problems)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))


def resolve_config(config: Mapping, seed: int | None = None, output_root: str | None = None) -> dict:
    """Merge with defaults, apply overrides, fill derived fields, validate."""
    if not isinstance(config, Mapping):
        raise ConfigError(f"config must be a mapping, got {type(config).__name__}")
    cfg = _merge(DEFAULTS, config)
    if seed is not None:
        cfg["seed"] = int(seed)
    if output_root is not None:
        cfg["output_root"] = str(output_root)
    if cfg["scenario"]["seed"] is None:
        cfg["scenario"]["seed"] = int(cfg["seed"])
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a key-value document")
    return doc


def _emit(value: Any, out: io.StringIO, indent: int) -> None:
    pad = "  " * indent
    for key, item in value.items():
        if isinstance(item, Mapping):
            out.write(f"{pad}{key}:\n")
            _emit(item, out, indent + 1)
        elif isinstance(item, (list, tuple)):
            rendered = ", ".join(_scalar(v) for v in item)
            out.write(f"{pad}{key}: [{rendered}]\n")
        else:
            out.write(f"{pad}{key}: {_scalar(item)}\n")


def _scalar(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return value
    return str(value)


def config_text(cfg: Mapping) -> str:
    """Stable plain-text rendering (key order fixed by the defaults)."""
    out = io.StringIO()
    _emit(cfg, out, 0)
    return out.getvalue()


def config_hash(cfg: Mapping) -> str:
    return hashlib.sha256(config_text(cfg).encode("utf-8")).hexdigest()[:16]


def write_config(cfg: Mapping, path: str | Path) -> None:
    Path(path).write_text(config_text(cfg), encoding="utf-8")
