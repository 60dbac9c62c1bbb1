"""Base-training and constrained-finetuning loops, plus evaluation.

Finetuning walks the novel training set in seeded shuffled batches. For the
replay strategies a memory batch is drawn each step and the update is chosen
by the strategy: ``plain`` applies the novel gradient, ``joint`` the
unconditional average, ``agem``/``cfa`` the corresponding projection rule.

Optimizer composition: weight decay is added to each task gradient before
projection, so the constraint geometry sees the direction actually applied;
momentum is applied after projection to the combined update. The per-step
sign guarantees therefore hold for the pre-momentum update, and telemetry
records that update's geometry.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, NumericError, TrainingError
from .model import (
    Batch,
    HeadKind,
    ModelConfig,
    ModelParams,
    apply_update,
    flatten_params,
    frozen_coordinates,
    freeze_mask_for_groups,
    forward_loss,
    forward_logits,
    init_model,
    loss_and_grad,
    param_count,
    reinit_head_rows,
    set_freeze_mask,
)
from .projection import agem_update, cfa_update
from .rng import (
    STREAM_BASE_TRAIN,
    STREAM_FINETUNE,
    STREAM_MEMORY,
    STREAM_TASK,
    Xoshiro256StarStar,
    derive_seed,
)
from .tasks import EpisodicMemory, LabeledSet, TaskConfig, TaskSplit, build_memory, generate_task, sample_batch

logger = logging.getLogger(__name__)


class Strategy(str, Enum):
    PLAIN = "plain"
    JOINT = "joint"
    AGEM = "agem"
    CFA = "cfa"


@dataclass(frozen=True)
class FreezeSpec:
    """Component groups excluded from finetune updates."""

    backbone: bool = False
    intermediate: bool = False
    head: bool = False


@dataclass(frozen=True)
class TrainConfig:
    lr_base: float = 0.02
    lr_finetune: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 16
    memory_batch_size: int = 16
    epochs_base: int = 10
    epochs_finetune: int = 200
    k_memory: int = 10
    hidden_dims: tuple[int, ...] = (64,)
    head_kind: HeadKind = HeadKind.FC
    cosine_scale: float = 10.0
    freeze: FreezeSpec = field(default_factory=FreezeSpec)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        object.__setattr__(self, "head_kind", HeadKind(self.head_kind))
        if self.lr_base < 0 or self.lr_finetune < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.memory_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.epochs_base < 0 or self.epochs_finetune < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.k_memory < 1:
            raise ConfigError(f"k_memory must be >= 1, got {self.k_memory}")
        if self.cosine_scale <= 0:
            raise ConfigError("cosine_scale must be positive")


@dataclass(frozen=True)
class Metrics:
    """Per-split accuracies; overall is over the pooled test set."""

    base_acc: float
    novel_acc: float
    overall_acc: float
    forgetting: float | None = None


def _accuracy(params: ModelParams, data: LabeledSet) -> float:
    logits = forward_logits(params, data.features)
    return float((logits.argmax(axis=1) == data.labels).mean())


def evaluate(params: ModelParams, split: TaskSplit) -> Metrics:
    """Argmax-over-all-classes accuracy on base, novel, and pooled test sets."""
    pooled = LabeledSet(
        features=np.vstack([split.base_test.features, split.novel_test.features]),
        labels=np.concatenate([split.base_test.labels, split.novel_test.labels]),
    )
    return Metrics(
        base_acc=_accuracy(params, split.base_test),
        novel_acc=_accuracy(params, split.novel_test),
        overall_acc=_accuracy(params, pooled),
    )


def memory_loss(params: ModelParams, memory: EpisodicMemory) -> float:
    """Mean per-sample loss over the entire memory buffer."""
    if len(memory) == 0:
        raise ValueError("memory is empty")
    batch = Batch(features=memory.shots.features.copy(), labels=memory.shots.labels.copy())
    return forward_loss(params, batch)[0]


def _decayed_grad(params, batch, weight_decay, theta, frozen):
    loss, grad = loss_and_grad(params, batch)
    if not np.isfinite(loss):
        return loss, grad
    if weight_decay:
        grad = grad + np.where(frozen, 0.0, weight_decay * theta)
    return loss, grad


def base_train(split: TaskSplit, config: TrainConfig, rng: Xoshiro256StarStar) -> ModelParams:
    """Train a fresh model on the base classes with momentum SGD.

    The head covers all classes; novel rows simply receive no label during
    this stage. Freeze settings apply to finetuning only.
    """
    init_rng, order_rng = rng.split(2)
    dims = (split.feature_dim, *config.hidden_dims, split.class_count)
    params = init_model(
        ModelConfig(dims=dims, head_kind=config.head_kind, cosine_scale=config.cosine_scale),
        init_rng,
    )
    velocity = np.zeros(param_count(params))
    frozen = frozen_coordinates(params)
    data = split.base_train
    n = len(data)
    previous = params
    for _ in range(config.epochs_base):
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = Batch(features=data.features[idx], labels=data.labels[idx])
            theta = flatten_params(params)
            try:
                loss, grad = _decayed_grad(params, batch, config.weight_decay, theta, frozen)
            except NumericError as exc:
                raise TrainingError(
                    f"base training diverged: {exc}", last_params=previous
                ) from exc
            if not np.isfinite(loss):
                raise TrainingError(
                    f"base training diverged (loss={loss})", last_params=previous
                )
            velocity = config.momentum * velocity + grad
            previous = params
            params = apply_update(params, velocity, config.lr_base)
    return params


def finetune(
    params: ModelParams,
    strategy: Strategy,
    split: TaskSplit,
    memory: EpisodicMemory | None,
    config: TrainConfig,
    rng: Xoshiro256StarStar,
    config_echo: dict | None = None,
):
    """Finetune on the novel shots; returns (final params, run report).

    ``params`` is taken as the starting point verbatim (novel head rows are
    re-initialized by the caller, see ``prepare_finetune_params``). The
    forgetting metric is measured against the base accuracy of ``params``.
    """
    from .telemetry import record_step, record_unprojected_step, summarize

    t_start = time.perf_counter()
    strategy = Strategy(strategy)
    if strategy is not Strategy.PLAIN and memory is None:
        raise ValueError(f"strategy {strategy.value} requires an episodic memory")

    order_rng, mem_rng = rng.split(2)
    base_acc_before = _accuracy(params, split.base_test)
    mask = freeze_mask_for_groups(
        len(params.layers),
        backbone=config.freeze.backbone,
        intermediate=config.freeze.intermediate,
        head=config.freeze.head,
    )
    params = set_freeze_mask(params, mask)
    frozen = frozen_coordinates(params)
    velocity = np.zeros(param_count(params))
    steps = []
    previous = params
    data = split.novel_train
    n = len(data)
    step_idx = 0
    for _ in range(config.epochs_finetune):
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            novel_batch = Batch(features=data.features[idx], labels=data.labels[idx])
            theta = flatten_params(params)
            try:
                loss_n, g_n = _decayed_grad(params, novel_batch, config.weight_decay, theta, frozen)
            except NumericError as exc:
                raise TrainingError(
                    f"finetuning diverged at step {step_idx}: {exc}", last_params=previous
                ) from exc
            if not np.isfinite(loss_n):
                raise TrainingError(
                    f"finetuning diverged at step {step_idx} (novel loss={loss_n})",
                    last_params=previous,
                )
            if strategy is Strategy.PLAIN:
                update = g_n
                row = record_unprojected_step(step_idx, update, g_n, None, loss_n, None)
            else:
                mem_batch = sample_batch(memory, config.memory_batch_size, mem_rng)
                try:
                    loss_b, g_b = _decayed_grad(params, mem_batch, config.weight_decay, theta, frozen)
                except NumericError as exc:
                    raise TrainingError(
                        f"finetuning diverged at step {step_idx}: {exc}", last_params=previous
                    ) from exc
                if not np.isfinite(loss_b):
                    raise TrainingError(
                        f"finetuning diverged at step {step_idx} (memory loss={loss_b})",
                        last_params=previous,
                    )
                if strategy is Strategy.JOINT:
                    update = 0.5 * (g_n + g_b)
                    row = record_unprojected_step(step_idx, update, g_n, g_b, loss_n, loss_b)
                else:
                    rule = agem_update if strategy is Strategy.AGEM else cfa_update
                    outcome = rule(g_n, g_b)
                    update = outcome.update
                    row = record_step(outcome, step_idx, loss_n, loss_b)
            if row.stall:
                logger.debug("stall at step %d: zero projected update", step_idx)
            steps.append(row)
            velocity = config.momentum * velocity + update
            previous = params
            params = apply_update(params, velocity, config.lr_finetune)
            step_idx += 1

    metrics = evaluate(params, split)
    metrics = replace(metrics, forgetting=base_acc_before - metrics.base_acc)
    report = summarize(
        steps,
        metrics,
        config_echo if config_echo is not None else {"strategy": strategy.value},
        wall_time=time.perf_counter() - t_start,
    )
    return params, report


def prepare_finetune_params(
    base_params: ModelParams, split: TaskSplit, rng: Xoshiro256StarStar
) -> ModelParams:
    """Fresh novel head rows at finetune start; base rows carry over."""
    return reinit_head_rows(base_params, split.novel_classes, rng)


def _jsonable(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return {k: _jsonable(getattr(value, k)) for k in value.__dataclass_fields__}
    return value


def make_config_echo(task: TaskConfig, train: TrainConfig, strategy: Strategy, seed: int) -> dict:
    return {
        "task": _jsonable(task),
        "train": _jsonable(train),
        "strategy": Strategy(strategy).value,
        "seed": int(seed),
    }


@dataclass(frozen=True, eq=False)
class RunResult:
    split: TaskSplit
    memory: EpisodicMemory
    base_params: ModelParams
    start_params: ModelParams
    final_params: ModelParams
    report: object  # telemetry.RunReport


def run_single(
    task_config: TaskConfig,
    train_config: TrainConfig,
    strategy: Strategy,
    seed: int,
    split: TaskSplit | None = None,
    base_params: ModelParams | None = None,
) -> RunResult:
    """Full pipeline for one (strategy, seed) cell with derived RNG streams.

    ``split`` and ``base_params`` can be passed in to share work across
    strategy cells; recomputing them from the same seed yields bit-identical
    values, so sharing never changes results.
    """
    if split is None:
        split = generate_task(task_config, Xoshiro256StarStar(derive_seed(seed, STREAM_TASK)))
    if base_params is None:
        base_params = base_train(
            split, train_config, Xoshiro256StarStar(derive_seed(seed, STREAM_BASE_TRAIN))
        )
    memory = build_memory(
        split, train_config.k_memory, Xoshiro256StarStar(derive_seed(seed, STREAM_MEMORY))
    )
    ft_master = Xoshiro256StarStar(derive_seed(seed, STREAM_FINETUNE))
    reinit_rng, loop_rng = ft_master.split(2)
    start_params = prepare_finetune_params(base_params, split, reinit_rng)
    echo = make_config_echo(task_config, train_config, strategy, seed)
    final_params, report = finetune(
        start_params, strategy, split, memory, train_config, loop_rng, config_echo=echo
    )
    return RunResult(
        split=split,
        memory=memory,
        base_params=base_params,
        start_params=start_params,
        final_params=final_params,
        report=report,
    )
