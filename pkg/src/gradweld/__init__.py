"""Constrained gradient-projection finetuning with a desk-scale harness."""

from .errors import (
    ConfigError,
    DataError,
    GradweldError,
    NumericError,
    OracleError,
    TrainingError,
    VerificationError,
)
from .model import Batch, HeadKind, ModelConfig, ModelParams
from .projection import (
    ProjectionOutcome,
    Rule,
    agem_update,
    cfa_project_pair,
    cfa_update,
    dot_and_angle,
)
from .qp import ConstraintSet, QpSolution, qp_oracle
from .rng import Xoshiro256StarStar, derive_seed
from .tasks import EpisodicMemory, TaskConfig, TaskSplit, build_memory, generate_task, sample_batch
from .training import (
    FreezeSpec,
    Metrics,
    Strategy,
    TrainConfig,
    base_train,
    evaluate,
    finetune,
    memory_loss,
    run_single,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ConfigError",
    "ConstraintSet",
    "DataError",
    "EpisodicMemory",
    "FreezeSpec",
    "GradweldError",
    "HeadKind",
    "Metrics",
    "ModelConfig",
    "ModelParams",
    "NumericError",
    "OracleError",
    "ProjectionOutcome",
    "QpSolution",
    "Rule",
    "Strategy",
    "TaskConfig",
    "TaskSplit",
    "TrainConfig",
    "TrainingError",
    "VerificationError",
    "Xoshiro256StarStar",
    "agem_update",
    "base_train",
    "build_memory",
    "cfa_project_pair",
    "cfa_update",
    "derive_seed",
    "dot_and_angle",
    "evaluate",
    "finetune",
    "generate_task",
    "memory_loss",
    "qp_oracle",
    "run_single",
    "sample_batch",
]
