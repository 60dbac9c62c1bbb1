"""Per-step gradient-geometry logging and run report serialization.

Every finetune step produces one TelemetryStep. Steps from the projection
rules copy their ProjectionOutcome verbatim; baseline strategies (plain and
joint) log through ``record_unprojected_step``, which computes the same
geometry directly. A run's report is written as a schema-versioned
``report.json`` plus a ``steps.csv`` with one row per step, columns in
field order. Serialization is lossless for all finite values: floats go
through ``repr`` (shortest round-trip), absent values are empty cells /
JSON nulls.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from statistics import median
from typing import Optional

from .errors import ConfigError
from .projection import ProjectionOutcome, dot_and_angle
from .training import Metrics

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
STALL_WARNING_RATE = 0.01


@dataclass(frozen=True)
class TelemetryStep:
    """One finetune step; optional fields are absent for plain finetuning."""

    step: int
    dot_nb: Optional[float]
    violated: bool
    angle_update_novel_deg: float
    angle_update_base_deg: Optional[float]
    alpha1: float
    alpha2: float
    loss_novel: float
    loss_memory_batch: Optional[float]
    stall: bool


@dataclass(frozen=True)
class AngleStats:
    """Mean/median update angles over violated, non-stall steps."""

    mean_to_novel_deg: float
    median_to_novel_deg: float
    mean_to_base_deg: float
    median_to_base_deg: float


@dataclass
class RunReport:
    config: dict
    steps: list[TelemetryStep]
    metrics: Metrics
    violation_rate: float
    stall_rate: float
    angle_stats: Optional[AngleStats]
    wall_time: float
    warnings: list[str] = field(default_factory=list)


def record_step(
    outcome: ProjectionOutcome,
    step: int,
    loss_novel: float,
    loss_memory_batch: float,
) -> TelemetryStep:
    """Copy an A-GEM/CFA outcome into a telemetry row, no recomputation."""
    return TelemetryStep(
        step=step,
        dot_nb=outcome.dot_nb,
        violated=outcome.violated,
        angle_update_novel_deg=outcome.angle_to_novel_deg,
        angle_update_base_deg=outcome.angle_to_base_deg,
        alpha1=outcome.alpha1,
        alpha2=outcome.alpha2,
        loss_novel=loss_novel,
        loss_memory_batch=loss_memory_batch,
        stall=outcome.stall,
    )


def record_unprojected_step(
    step: int,
    update,
    g_n,
    g_b,
    loss_novel: float,
    loss_memory_batch: Optional[float],
) -> TelemetryStep:
    """Telemetry row for a strategy that applies the update without projection.

    ``g_b`` and ``loss_memory_batch`` are None for plain novel-only steps.
    """
    if g_b is None:
        dot = None
        violated = False
        angle_base = None
    else:
        dot, _ = dot_and_angle(g_n, g_b)
        violated = dot < 0
        angle_base = dot_and_angle(update, g_b)[1]
    return TelemetryStep(
        step=step,
        dot_nb=dot,
        violated=violated,
        angle_update_novel_deg=dot_and_angle(update, g_n)[1],
        angle_update_base_deg=angle_base,
        alpha1=0.0,
        alpha2=0.0,
        loss_novel=loss_novel,
        loss_memory_batch=loss_memory_batch,
        stall=not update.any(),
    )


def summarize(
    steps: list[TelemetryStep],
    metrics: Metrics,
    config: dict,
    wall_time: float,
) -> RunReport:
    """Aggregate a step sequence into a report.

    Angle statistics cover violated, non-stall steps only (stall angles are
    a 0-by-convention artifact); they are absent when no step violated.
    """
    if not steps:
        raise ValueError("cannot summarize an empty run")
    n = len(steps)
    violated = [s for s in steps if s.violated]
    angled = [s for s in violated if not s.stall]
    angle_stats = None
    if angled:
        to_novel = [s.angle_update_novel_deg for s in angled]
        to_base = [s.angle_update_base_deg for s in angled]
        angle_stats = AngleStats(
            mean_to_novel_deg=sum(to_novel) / len(to_novel),
            median_to_novel_deg=median(to_novel),
            mean_to_base_deg=sum(to_base) / len(to_base),
            median_to_base_deg=median(to_base),
        )
    stall_rate = sum(1 for s in steps if s.stall) / n
    warnings = []
    if stall_rate >= STALL_WARNING_RATE:
        message = f"stall rate {stall_rate:.2%}: zero updates in {stall_rate * n:.0f} of {n} steps"
        warnings.append(message)
        logger.warning(message)
    return RunReport(
        config=config,
        steps=list(steps),
        metrics=metrics,
        violation_rate=len(violated) / n,
        stall_rate=stall_rate,
        angle_stats=angle_stats,
        wall_time=wall_time,
        warnings=warnings,
    )


_STEP_FIELDS = [f.name for f in fields(TelemetryStep)]
_STEP_BOOL_FIELDS = {"violated", "stall"}
_STEP_INT_FIELDS = {"step"}


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(name: str, text: str):
    if text == "":
        return None
    if name in _STEP_BOOL_FIELDS:
        return text == "true"
    if name in _STEP_INT_FIELDS:
        return int(text)
    return float(text)


def write_steps_csv(steps: list[TelemetryStep], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_STEP_FIELDS)
        for step in steps:
            row = asdict(step)
            writer.writerow([_cell(row[name]) for name in _STEP_FIELDS])


def read_steps_csv(path) -> list[TelemetryStep]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _STEP_FIELDS:
            raise ConfigError(f"unexpected steps.csv header: {header}")
        return [
            TelemetryStep(**{n: _parse_cell(n, cell) for n, cell in zip(header, row)})
            for row in reader
        ]


def write_report(report: RunReport, out_dir) -> tuple[Path, Path]:
    """Write report.json and steps.csv into a directory; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "config": report.config,
        "metrics": asdict(report.metrics),
        "violation_rate": report.violation_rate,
        "stall_rate": report.stall_rate,
        "angle_stats": asdict(report.angle_stats) if report.angle_stats else None,
        "wall_time": report.wall_time,
        "warnings": report.warnings,
        "n_steps": len(report.steps),
    }
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    csv_path = out_dir / "steps.csv"
    write_steps_csv(report.steps, csv_path)
    return json_path, csv_path


def read_report(run_dir) -> RunReport:
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != REPORT_FORMAT_VERSION:
        raise ConfigError(f"unsupported report format_version: {version!r}")
    steps = read_steps_csv(run_dir / "steps.csv")
    if len(steps) != doc["n_steps"]:
        raise ConfigError(
            f"steps.csv has {len(steps)} rows, report.json says {doc['n_steps']}"
        )
    angle_stats = AngleStats(**doc["angle_stats"]) if doc["angle_stats"] else None
    return RunReport(
        config=doc["config"],
        steps=steps,
        metrics=Metrics(**doc["metrics"]),
        violation_rate=doc["violation_rate"],
        stall_rate=doc["stall_rate"],
        angle_stats=angle_stats,
        wall_time=doc["wall_time"],
        warnings=list(doc["warnings"]),
    )
