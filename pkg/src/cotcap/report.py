"""Results tables (CSV / aligned text) and matplotlib figures for metric reports."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics.config import COLUMNS  # noqa: E402
from .models import MetricReport  # noqa: E402

plt.rcParams.update(
    {
        "font.size": 9,
        "axes.labelsize": 9,
        "legend.fontsize": 8,
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "savefig.dpi": 150,
    }
)


def table_columns(reports: Mapping[str, MetricReport]) -> list[str]:
    present = set().union(*(r.corpus for r in reports.values())) if reports else set()
    cols = [c for c in COLUMNS if c in present]
    return cols + sorted(present - set(cols))


def table_rows(reports: Mapping[str, MetricReport]) -> tuple[list[str], list[list[str]]]:
    cols = table_columns(reports)
    rows = []
    for label, rep in reports.items():
        rows.append([label] + [f"{rep.corpus[c]:.3f}" if c in rep.corpus else "-" for c in cols])
    return ["Method", *cols], rows


def to_csv(reports: Mapping[str, MetricReport]) -> str:
    header, rows = table_rows(reports)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def to_text(reports: Mapping[str, MetricReport]) -> str:
    header, rows = table_rows(reports)
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def plot_corpus_bars(reports: Mapping[str, MetricReport], path: str | Path) -> Path:
    """Grouped bars: one group per metric, one bar per run."""
    cols = table_columns(reports)
    labels = list(reports)
    x = np.arange(len(cols))
    width = 0.8 / max(1, len(labels))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(cols) + 1.5), 3.0))
    for k, label in enumerate(labels):
        vals = [reports[label].corpus.get(c, np.nan) for c in cols]
        ax.bar(x + (k - (len(labels) - 1) / 2) * width, vals, width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(cols, rotation=30, ha="right")
    ax.set_ylabel("corpus score")
    if len(labels) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_item_distributions(report: MetricReport, path: str | Path, title: str = "") -> Path:
    """Box plot of per-item scores for each metric in one report."""
    cols = table_columns({"_": report})
    data = [[scores[c] for scores in report.per_item.values() if c in scores] for c in cols]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(cols) + 1.5), 3.0))
    ax.boxplot(data, showfliers=False)
    ax.set_xticks(range(1, len(cols) + 1))
    ax.set_xticklabels(cols, rotation=30, ha="right")
    ax.set_ylabel("per-item score")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def render_report(reports: Mapping[str, MetricReport], out_dir: str | Path, fmt: str = "png") -> dict[str, Path]:
    """Write ``table.csv``, ``table.txt``, the corpus bar chart and one
    per-item distribution figure per run into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    (out / "table.csv").write_text(to_csv(reports), encoding="utf-8")
    written["table.csv"] = out / "table.csv"
    (out / "table.txt").write_text(to_text(reports), encoding="utf-8")
    written["table.txt"] = out / "table.txt"
    written["corpus"] = plot_corpus_bars(reports, out / f"corpus_scores.{fmt}")
    for label, rep in reports.items():
        safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)
        written[f"items:{label}"] = plot_item_distributions(rep, out / f"items_{safe}.{fmt}", title=label)
    return written


def labels_for(paths: Sequence[str | Path]) -> list[str]:
    """Default run labels: report file stem, or parent dir name for ``report.json``."""
    out = []
    for p in map(Path, paths):
        out.append(p.parent.name if p.stem == "report" and p.parent.name else p.stem)
    return out
