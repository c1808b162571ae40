"""Rendering of evaluation reports: delimited files, figures, and text tables."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import RecallCurve, StrategyRow


def write_recall_csv(curve: RecallCurve, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["measure", "elapsed_ms", "recall"])
        for measure, points in sorted(curve.points.items()):
            for elapsed, recall in points:
                writer.writerow([measure, f"{elapsed:.3f}", f"{recall:.6f}"])


def plot_recall_curves(curve: RecallCurve, path: str | Path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for measure, points in sorted(curve.points.items()):
        if not points:
            continue
        xs = [0.0] + [p[0] for p in points]
        ys = [0.0] + [p[1] for p in points]
        ax.step(xs, ys, where="post", label=measure)
    ax.set_xlabel("elapsed (ms)")
    ax.set_ylabel("score recall")
    ax.set_ylim(0.0, 1.05)
    ax.axhline(0.95, color="gray", linestyle=":", linewidth=1)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_compare_csv(rows: Sequence[StrategyRow], path: str | Path) -> None:
    measures = sorted({m for row in rows for m in row.time_to_recall})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["strategy", "runs", "first_result_ms"]
        for m in measures:
            header += [f"time_ms:{m}", f"combos:{m}"]
        writer.writerow(header)
        for row in rows:
            record = [row.strategy, row.runs, _fmt(row.first_result_ms)]
            for m in measures:
                record += [_fmt(row.time_to_recall.get(m)), _fmt(row.combos_to_recall.get(m))]
            writer.writerow(record)


def plot_compare(rows: Sequence[StrategyRow], path: str | Path, threshold: float = 0.95) -> None:
    measures = sorted({m for row in rows for m in row.time_to_recall})
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(measures), 4.5))
    width = 0.8 / max(1, len(rows))
    for i, row in enumerate(rows):
        xs = [j + i * width for j in range(len(measures))]
        ys = [row.time_to_recall.get(m) or 0.0 for m in measures]
        ax.bar(xs, ys, width=width, label=row.strategy)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(measures))])
    ax.set_xticklabels(measures, rotation=20, fontsize=8)
    ax.set_ylabel(f"time to {threshold:.0%} recall (ms)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.3f}"


def render_table(rows: Sequence[StrategyRow]) -> str:
    measures = sorted({m for row in rows for m in row.time_to_recall})
    headers = ["strategy", "runs", "first(ms)"] + measures
    table = [headers]
    for row in rows:
        cells = [row.strategy, str(row.runs), _cell(row.first_result_ms)]
        cells += [_cell(row.time_to_recall.get(m)) for m in measures]
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for r, record in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(record)))
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _cell(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.1f}"
