"""Figure rendering for run reports.

Renders the per-step gradient-geometry curves (update angle against the
novel and base gradients) and the loss curves for a collection of runs.
Raw per-step values are stored in steps.csv; smoothing happens only here,
with the window exposed as a CLI flag.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .telemetry import RunReport


def moving_average(values, window: int):
    """Centered-ish moving average; window 1 returns the input unchanged."""
    if window < 1:
        raise ValueError(f"smoothing window must be >= 1, got {window}")
    arr = np.asarray(values, dtype=np.float64)
    if window == 1 or arr.size == 0:
        return arr
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid")


def _angle_series(report: RunReport, attr: str):
    xs, ys = [], []
    for step in report.steps:
        value = getattr(step, attr)
        if value is None or step.stall:
            continue
        xs.append(step.step)
        ys.append(value)
    return xs, ys


def _plot_series(labeled_reports, attr, title, ylabel, smooth, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, report in labeled_reports:
        xs, ys = _angle_series(report, attr)
        if not ys:
            continue
        ys = moving_average(ys, min(smooth, len(ys)))
        xs = xs[len(xs) - len(ys):]
        ax.plot(xs, ys, label=label, linewidth=1.0)
    ax.set_xlabel("finetune step")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if labeled_reports:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_losses(labeled_reports, smooth, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, report in labeled_reports:
        xs = [s.step for s in report.steps]
        ys = moving_average([s.loss_novel for s in report.steps], min(smooth, len(xs)))
        ax.plot(xs[len(xs) - len(ys):], ys, label=f"{label} novel", linewidth=1.0)
        mem = [(s.step, s.loss_memory_batch) for s in report.steps if s.loss_memory_batch is not None]
        if mem:
            mx, my = zip(*mem)
            my = moving_average(my, min(smooth, len(my)))
            ax.plot(mx[len(mx) - len(my):], my, label=f"{label} memory", linewidth=1.0, linestyle="--")
    ax.set_xlabel("finetune step")
    ax.set_ylabel("loss")
    ax.set_title("Per-step losses")
    ax.grid(True, alpha=0.3)
    if labeled_reports:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report_figures(labeled_reports, out_dir, smooth: int = 1) -> list[Path]:
    """Write the three standard figures; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [
        out_dir / "angles_to_novel.png",
        out_dir / "angles_to_base.png",
        out_dir / "losses.png",
    ]
    _plot_series(
        labeled_reports,
        "angle_update_novel_deg",
        "Angle between applied update and novel gradient",
        "angle (deg)",
        smooth,
        paths[0],
    )
    _plot_series(
        labeled_reports,
        "angle_update_base_deg",
        "Angle between applied update and base gradient",
        "angle (deg)",
        smooth,
        paths[1],
    )
    _plot_losses(labeled_reports, smooth, paths[2])
    return paths
