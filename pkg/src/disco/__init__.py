"""Continual learning with contrastive task separation.

The package trains class-incremental task sequences (optionally with
per-task domain shift), regularizes them with a prototype-pool contrastive
objective plus cross-task contrastive distillation, and measures forgetting
and parameter interference over the resulting artifacts.
"""

from .data import ArrayDataset, gaussian_blobs, two_moons
from .engine import (
    ArchConfig,
    RehearsalBuffer,
    RunRecord,
    TeacherHandle,
    TrainConfig,
    evaluate,
    run_all,
    train_task,
    update_buffer,
)
from .losses import LossWeights, ccd, ccon, cosine_similarity, tcon, total_loss, triplet
from .metrics import (
    AccuracyMatrix,
    average_accuracy,
    forgetting_measure,
    high_magnitude_set,
    initial_accuracy,
    interference_and_transfer,
    intra_task_accuracy,
    piv_pfts,
    task_inference_accuracy,
    update_profile,
)
from .model import (
    ModelBundle,
    ParameterSnapshot,
    PromptPool,
    build_bundle,
    restore,
    select_keys,
    snapshot,
)
from .prototypes import (
    HashedTextEmbedding,
    PrototypePool,
    batch_prototype,
    momentum_update,
    prompt_key_prototype,
    text_prototype,
)
from .scenario import (
    ContinualScenario,
    DatasetManifest,
    TaskSpec,
    attach_domains,
    cil_counterpart,
    materialize_task,
    split_base_increment,
    split_even,
)

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "ArrayDataset",
    "AccuracyMatrix",
    "ContinualScenario",
    "DatasetManifest",
    "HashedTextEmbedding",
    "LossWeights",
    "ModelBundle",
    "ParameterSnapshot",
    "PromptPool",
    "PrototypePool",
    "RehearsalBuffer",
    "RunRecord",
    "TaskSpec",
    "TeacherHandle",
    "TrainConfig",
    "attach_domains",
    "average_accuracy",
    "batch_prototype",
    "build_bundle",
    "ccd",
    "ccon",
    "cil_counterpart",
    "cosine_similarity",
    "evaluate",
    "forgetting_measure",
    "gaussian_blobs",
    "high_magnitude_set",
    "initial_accuracy",
    "interference_and_transfer",
    "intra_task_accuracy",
    "materialize_task",
    "momentum_update",
    "piv_pfts",
    "prompt_key_prototype",
    "restore",
    "run_all",
    "select_keys",
    "snapshot",
    "split_base_increment",
    "split_even",
    "task_inference_accuracy",
    "tcon",
    "text_prototype",
    "total_loss",
    "train_task",
    "triplet",
    "two_moons",
    "update_buffer",
    "update_profile",
]
