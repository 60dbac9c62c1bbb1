"""Experiment configuration: JSON document -> validated dataclasses.

Validation is strict: unknown keys anywhere in the document are rejected so
a typo cannot silently fall back to a default and misconfigure a sweep.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .model import HeadKind
from .tasks import TaskConfig
from .training import FreezeSpec, Strategy, TrainConfig

CONFIG_FORMAT_VERSION = 1

_TASK_KEYS = {
    "n_base", "n_novel", "feature_dim", "k_novel", "n_abundant", "n_test", "radius", "sigma",
}
_TRAIN_KEYS = {
    "lr_base", "lr_finetune", "momentum", "weight_decay", "batch_size",
    "memory_batch_size", "epochs_base", "epochs_finetune", "k_memory",
    "hidden_dims", "head_kind", "cosine_scale", "freeze",
}
_FREEZE_KEYS = {"backbone", "intermediate", "head"}
_TOP_KEYS = {"format_version", "task", "train", "strategy", "seeds", "output_dir"}


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskConfig
    train: TrainConfig
    strategy: Strategy
    seeds: tuple[int, ...]
    output_dir: str


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_experiment_config(doc: dict) -> ExperimentConfig:
    _require(isinstance(doc, dict), "config must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "config")
    version = doc.get("format_version", CONFIG_FORMAT_VERSION)
    _require(
        version == CONFIG_FORMAT_VERSION,
        f"unsupported config format_version: {version!r}",
    )

    task_section = doc.get("task", {})
    _require(isinstance(task_section, dict), "'task' must be an object")
    _reject_unknown(task_section, _TASK_KEYS, "task")

    train_section = dict(doc.get("train", {}))
    _require(isinstance(train_section, dict), "'train' must be an object")
    _reject_unknown(train_section, _TRAIN_KEYS, "train")
    freeze_section = train_section.pop("freeze", {})
    _require(isinstance(freeze_section, dict), "'train.freeze' must be an object")
    _reject_unknown(freeze_section, _FREEZE_KEYS, "train.freeze")

    _require("strategy" in doc, "config is missing 'strategy'")
    try:
        strategy = Strategy(doc["strategy"])
    except ValueError:
        valid = ", ".join(s.value for s in Strategy)
        raise ConfigError(f"unknown strategy {doc['strategy']!r}; expected one of: {valid}")

    _require("seeds" in doc, "config is missing 'seeds' (explicit seeding is required)")
    seeds = doc["seeds"]
    _require(
        isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds),
        "'seeds' must be a non-empty list of integers",
    )
    _require(len(set(seeds)) == len(seeds), "'seeds' contains duplicates")

    _require("output_dir" in doc, "config is missing 'output_dir'")
    output_dir = doc["output_dir"]
    _require(isinstance(output_dir, str) and output_dir, "'output_dir' must be a non-empty string")

    try:
        task = TaskConfig(**task_section)
        if "head_kind" in train_section:
            train_section["head_kind"] = HeadKind(train_section["head_kind"])
        train = TrainConfig(**train_section, freeze=FreezeSpec(**freeze_section))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

    return ExperimentConfig(
        task=task,
        train=train,
        strategy=strategy,
        seeds=tuple(seeds),
        output_dir=output_dir,
    )


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_experiment_config(doc)
