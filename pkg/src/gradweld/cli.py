"""Command-line entry point.

Subcommands:

* ``verify`` -- randomized verification of the projection algebra against
  the numerical QP oracle; prints one residual line per suite.
* ``run``    -- full pipeline (base train, memory, finetune, evaluate) for
  every seed in the config; writes report.json/steps.csv per run.
* ``ablate`` -- sweep base shots, freeze masks, or head kind; writes a
  comparison table (CSV + JSON).
* ``report`` -- merge existing run reports into a summary table and render
  the angle/loss figures.

Exit codes: 0 success, 2 usage, 3 config, 4 numeric/training failure,
5 verification failure. Sweep parallelism is capped by GRADWELD_THREADS
(default 1); cells use independent RNG streams so results do not depend on
the worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_experiment_config
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    OracleError,
    TrainingError,
    VerificationError,
)
from .model import HeadKind, save_checkpoint
from .training import FreezeSpec, Strategy, run_single
from .verify import DEFAULT_ADVERSARIAL, DEFAULT_DIMS, run_verification

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_TRAINING = 4
EXIT_VERIFY = 5

BASE_SHOT_SWEEP = (1, 2, 3, 5, 10)
ABLATE_STRATEGIES = (Strategy.JOINT, Strategy.CFA)
# Freeze rows mirror the component table: the head-only row is the classic
# finetune-the-classifier setting, the last row unfreezes everything.
FREEZE_ROWS = (
    ("none", FreezeSpec(backbone=True, intermediate=True, head=True)),
    ("intermediate", FreezeSpec(backbone=True, intermediate=False, head=True)),
    ("head", FreezeSpec(backbone=True, intermediate=True, head=False)),
    ("intermediate+head", FreezeSpec(backbone=True, intermediate=False, head=False)),
    ("backbone+intermediate+head", FreezeSpec(backbone=False, intermediate=False, head=False)),
)


def _thread_cap() -> int:
    raw = os.environ.get("GRADWELD_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"GRADWELD_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"GRADWELD_THREADS must be >= 1, got {value}")
    return value


def _refuse_clobber(paths, overwrite: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not overwrite:
        raise ConfigError(
            "refusing to overwrite existing output (pass --overwrite): "
            + ", ".join(existing)
        )


def _run_cell(cell) -> dict:
    """One (strategy, seed) pipeline cell; top-level for process pools."""
    config, strategy, seed, run_dir = cell
    from .telemetry import write_report  # local import keeps workers lean

    result = run_single(config.task, config.train, strategy, seed)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_report(result.report, run_dir)
    save_checkpoint(result.final_params, run_dir / "final_model.json")
    metrics = result.report.metrics
    return {
        "strategy": Strategy(strategy).value,
        "seed": seed,
        "base_acc": metrics.base_acc,
        "novel_acc": metrics.novel_acc,
        "overall_acc": metrics.overall_acc,
        "forgetting": metrics.forgetting,
        "violation_rate": result.report.violation_rate,
        "run_dir": str(run_dir),
    }


def _execute_cells(cells) -> list[dict]:
    threads = _thread_cap()
    if threads == 1 or len(cells) <= 1:
        return [_run_cell(cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=min(threads, len(cells))) as pool:
        return list(pool.map(_run_cell, cells))


def _summary_line(row: dict) -> str:
    return (
        f"strategy={row['strategy']} seed={row['seed']} "
        f"base_acc={row['base_acc']:.4f} novel_acc={row['novel_acc']:.4f} "
        f"overall_acc={row['overall_acc']:.4f} forgetting={row['forgetting']:.4f} "
        f"violation_rate={row['violation_rate']:.4f}"
    )


def run_dir_for(config: ExperimentConfig, strategy: Strategy, seed: int) -> Path:
    return Path(config.output_dir) / Strategy(strategy).value / f"seed_{seed}"


def cmd_verify(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        dims = tuple(int(d) for d in args.dims.split(","))
    except ValueError:
        print(f"error: --dims must be comma-separated integers, got {args.dims!r}", file=sys.stderr)
        return EXIT_USAGE
    results = run_verification(
        trials=args.trials,
        dims=dims,
        seed=args.seed,
        adversarial=args.adversarial,
        inject_bug=args.inject_bug,
    )
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(
            f"{res.name:18s} max residual {res.max_residual:.3e} "
            f"(bound {res.bound:.0e}, {res.pairs} pairs)  {status}"
        )
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"verify: {len(failed)} of {len(results)} suites FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print(f"verify: all {len(results)} suites passed")
    return EXIT_OK


def cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    cells = [
        (config, config.strategy, seed, run_dir_for(config, config.strategy, seed))
        for seed in config.seeds
    ]
    outputs = []
    for _, _, _, run_dir in cells:
        outputs.extend([run_dir / "report.json", run_dir / "steps.csv"])
    _refuse_clobber(outputs, args.overwrite)
    for row in _execute_cells(cells):
        print(_summary_line(row))
    return EXIT_OK


def _ablate_cells(config: ExperimentConfig, kind: str):
    """(cell descriptor, per-cell experiment config) pairs for one sweep."""
    cells = []
    if kind == "base_shots":
        for strategy in ABLATE_STRATEGIES:
            for k in BASE_SHOT_SWEEP:
                train = replace(config.train, k_memory=k)
                desc = {"strategy": strategy.value, "cell": f"k={k}"}
                cells.append((desc, replace(config, train=train, strategy=strategy)))
    elif kind == "freeze":
        # three toggleable groups need a middle layer; force two hidden layers
        hidden = config.train.hidden_dims
        if len(hidden) < 2:
            hidden = (*hidden, *hidden) if hidden else (64, 64)
        for strategy in ABLATE_STRATEGIES:
            for name, freeze in FREEZE_ROWS:
                train = replace(config.train, freeze=freeze, hidden_dims=hidden)
                desc = {"strategy": strategy.value, "cell": f"unfrozen={name}"}
                cells.append((desc, replace(config, train=train, strategy=strategy)))
    elif kind == "head":
        for head in (HeadKind.FC, HeadKind.COSINE):
            train = replace(config.train, head_kind=head)
            desc = {"strategy": Strategy.CFA.value, "cell": f"head={head.value}"}
            cells.append((desc, replace(config, train=train, strategy=Strategy.CFA)))
    else:
        raise ConfigError(f"unknown ablation kind {kind!r}")
    return cells


def _mean(values) -> float:
    return sum(values) / len(values)


def run_ablation(config: ExperimentConfig, kind: str) -> list[dict]:
    """All cells of one sweep, each averaged over the config's seeds.

    Splits and base models are cached per seed and base-stage settings;
    recomputing them from the same seed is bit-identical, so caching only
    saves time.
    """
    from .rng import STREAM_BASE_TRAIN, STREAM_TASK, Xoshiro256StarStar, derive_seed
    from .tasks import generate_task
    from .training import base_train

    base_cache: dict = {}

    def shared(seed, cell_config):
        train = cell_config.train
        key = (
            seed, train.hidden_dims, train.head_kind, train.cosine_scale,
            train.lr_base, train.momentum, train.weight_decay,
            train.batch_size, train.epochs_base,
        )
        if key not in base_cache:
            split = generate_task(
                cell_config.task, Xoshiro256StarStar(derive_seed(seed, STREAM_TASK))
            )
            params = base_train(
                split, train, Xoshiro256StarStar(derive_seed(seed, STREAM_BASE_TRAIN))
            )
            base_cache[key] = (split, params)
        return base_cache[key]

    rows = []
    for desc, cell_config in _ablate_cells(config, kind):
        results = []
        for seed in cell_config.seeds:
            split, base_params = shared(seed, cell_config)
            results.append(
                run_single(
                    cell_config.task, cell_config.train, cell_config.strategy, seed,
                    split=split, base_params=base_params,
                )
            )
        metrics = [r.report.metrics for r in results]
        rows.append(
            {
                "kind": kind,
                **desc,
                "n_seeds": len(results),
                "base_acc": _mean([m.base_acc for m in metrics]),
                "novel_acc": _mean([m.novel_acc for m in metrics]),
                "overall_acc": _mean([m.overall_acc for m in metrics]),
                "forgetting": _mean([m.forgetting for m in metrics]),
                "violation_rate": _mean([r.report.violation_rate for r in results]),
            }
        )
    return rows


def _write_table(rows: list[dict], csv_path: Path, json_path: Path) -> None:
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    json_path.write_text(json.dumps(rows, indent=2), encoding="utf-8")


def cmd_ablate(args) -> int:
    config = load_experiment_config(args.config)
    out_dir = Path(config.output_dir)
    csv_path = out_dir / f"ablate_{args.kind}.csv"
    json_path = out_dir / f"ablate_{args.kind}.json"
    _refuse_clobber([csv_path, json_path], args.overwrite)
    rows = run_ablation(config, args.kind)
    _write_table(rows, csv_path, json_path)
    for row in rows:
        print(
            f"{row['kind']} {row['strategy']:6s} {row['cell']:28s} "
            f"base_acc={row['base_acc']:.4f} novel_acc={row['novel_acc']:.4f} "
            f"overall_acc={row['overall_acc']:.4f} forgetting={row['forgetting']:.4f}"
        )
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plots import render_report_figures
    from .telemetry import read_report

    out_dir = Path(args.out)
    summary_csv = out_dir / "summary.csv"
    summary_json = out_dir / "summary.json"
    _refuse_clobber([summary_csv, summary_json], args.overwrite)

    labeled = []
    rows = []
    for run_dir in args.runs:
        report = read_report(run_dir)
        strategy = report.config.get("strategy", "?")
        seed = report.config.get("seed", "?")
        label = f"{strategy}-seed{seed}"
        labeled.append((label, report))
        stats = report.angle_stats
        rows.append(
            {
                "run": label,
                "run_dir": str(run_dir),
                "strategy": strategy,
                "seed": seed,
                "base_acc": report.metrics.base_acc,
                "novel_acc": report.metrics.novel_acc,
                "overall_acc": report.metrics.overall_acc,
                "forgetting": report.metrics.forgetting,
                "violation_rate": report.violation_rate,
                "stall_rate": report.stall_rate,
                "mean_angle_to_novel_deg": stats.mean_to_novel_deg if stats else None,
                "mean_angle_to_base_deg": stats.mean_to_base_deg if stats else None,
                "wall_time": report.wall_time,
            }
        )
    if not rows:
        print("error: no run directories given", file=sys.stderr)
        return EXIT_USAGE
    _write_table(rows, summary_csv, summary_json)
    figures = render_report_figures(labeled, out_dir, smooth=args.smooth)
    print(f"wrote {summary_csv}, {summary_json}")
    for path in figures:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradweld",
        description="Constrained gradient-projection finetuning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="verify projection algebra against the QP oracle")
    p_verify.add_argument("--trials", type=int, default=1000, help="random pairs per dimension")
    p_verify.add_argument("--dims", default=",".join(str(d) for d in DEFAULT_DIMS))
    p_verify.add_argument("--seed", type=int, required=True)
    p_verify.add_argument("--adversarial", type=int, default=DEFAULT_ADVERSARIAL)
    p_verify.add_argument("--inject-bug", action="store_true", help=argparse.SUPPRESS)
    p_verify.set_defaults(func=cmd_verify)

    p_run = sub.add_parser("run", help="run the full pipeline for every seed in the config")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--overwrite", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_ablate = sub.add_parser("ablate", help="sweep base shots, freeze masks, or head kind")
    p_ablate.add_argument("--kind", required=True, choices=("base_shots", "freeze", "head"))
    p_ablate.add_argument("--config", required=True, help="experiment config JSON (strategy field is ignored)")
    p_ablate.add_argument("--overwrite", action="store_true")
    p_ablate.set_defaults(func=cmd_ablate)

    p_report = sub.add_parser("report", help="summarize existing run reports and render figures")
    p_report.add_argument("--runs", nargs="+", required=True, help="run directories")
    p_report.add_argument("--out", required=True, help="output directory")
    p_report.add_argument("--smooth", type=int, default=25, help="moving-average window for curves")
    p_report.add_argument("--overwrite", action="store_true")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, NumericError, TrainingError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
