"""Merging run reports into comparison tables and summary figures.

Reports named like ``param=value`` are treated as sweep points and also get
a metric-versus-value curve; training traces found next to the reports are
drawn as learning curves. Figures render with the Agg backend so the report
path works headless.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

from .runio import atomic_path, read_jsonl

HEADLINE_METRICS = (
    "ndcg_average",
    "mean_composite_reward",
    "mean_predicted_satisfaction",
    "mean_retention_probability",
)

_SWEEP_NAME = re.compile(r"^(?P<param>[A-Za-z0-9_.]+)=(?P<value>-?[0-9.eE+-]+)$")


def collect_reports(directories: list[str | Path]) -> list[tuple[str, dict]]:
    """All report_*.json files under the given directories, recursively.

    The run name is the report stem (minus the report_ prefix); files inside
    sweep value directories take the directory name instead.
    """
    found = []
    for directory in directories:
        directory = Path(directory)
        for path in sorted(directory.rglob("report_*.json")):
            name = path.stem[len("report_") :]
            if _SWEEP_NAME.match(path.parent.name):
                name = path.parent.name
            found.append((name, json.loads(path.read_text())))
    return found


def collect_traces(directories: list[str | Path]) -> list[tuple[str, list[dict]]]:
    found = []
    for directory in directories:
        directory = Path(directory)
        for path in sorted(directory.rglob("train_trace_*.jsonl")):
            name = path.stem[len("train_trace_") :]
            if _SWEEP_NAME.match(path.parent.name):
                name = path.parent.name
            found.append((name, read_jsonl(path)))
    return found


def write_comparison_csv(reports: list[tuple[str, dict]], path: str | Path) -> None:
    """One row per run, columns the sorted union of metric names."""
    columns = sorted({key for _, report in reports for key in report})
    with atomic_path(path) as tmp:
        with tmp.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run"] + columns)
            for name, report in sorted(reports):
                writer.writerow([name] + [report.get(c, "") for c in columns])


def _sweep_points(reports: list[tuple[str, dict]]):
    by_param: dict[str, list[tuple[float, dict]]] = {}
    for name, report in reports:
        m = _SWEEP_NAME.match(name)
        if m:
            by_param.setdefault(m.group("param"), []).append(
                (float(m.group("value")), report)
            )
    return {p: sorted(v) for p, v in by_param.items()}


def render_figures(
    reports: list[tuple[str, dict]],
    traces: list[tuple[str, list[dict]]],
    out_dir: str | Path,
) -> list[Path]:
    """Bar comparison, learning curves, and sweep curves as PNG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if reports:
        metrics = [
            m for m in HEADLINE_METRICS if any(m in r for _, r in reports)
        ]
        if metrics:
            fig, axes = plt.subplots(
                1, len(metrics), figsize=(4.2 * len(metrics), 3.6), squeeze=False
            )
            names = [name for name, _ in sorted(reports)]
            for ax, metric in zip(axes[0], metrics):
                values = [dict(reports)[n].get(metric) for n in names]
                ax.bar(range(len(names)), [v if v is not None else 0.0 for v in values])
                ax.set_xticks(range(len(names)))
                ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
                ax.set_title(metric, fontsize=9)
                ax.grid(axis="y", alpha=0.3)
            fig.tight_layout()
            path = out_dir / "comparison.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)

    if traces:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for name, rows in sorted(traces):
            xs = [row["iteration"] for row in rows]
            ys = [row["mean_reward"] for row in rows]
            ax.plot(xs, ys, label=name, linewidth=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean composite reward")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / "training_curves.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    for param, points in _sweep_points(reports).items():
        metrics = [m for m in HEADLINE_METRICS if any(m in r for _, r in points)]
        alpha_metrics = ("corr_gap", "corr_retention", "composite")
        if not metrics and any(m in r for _, r in points for m in alpha_metrics):
            metrics = [m for m in alpha_metrics if any(m in r for _, r in points)]
        if not metrics:
            continue
        fig, axes = plt.subplots(
            1, len(metrics), figsize=(4.2 * len(metrics), 3.4), squeeze=False
        )
        for ax, metric in zip(axes[0], metrics):
            xs = [v for v, r in points if r.get(metric) is not None]
            ys = [r[metric] for _, r in points if r.get(metric) is not None]
            ax.plot(xs, ys, marker="o")
            ax.set_xlabel(param)
            ax.set_title(metric, fontsize=9)
            ax.grid(alpha=0.3)
        fig.tight_layout()
        safe = param.replace(".", "_")
        path = out_dir / f"sweep_{safe}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
