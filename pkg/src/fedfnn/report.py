"""Render metric CSVs written by the CLI into line plots.

Figures are saved next to the CSVs they were drawn from; nothing here is
needed to run an experiment. Uses the non-interactive Agg backend.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def read_metrics(path) -> dict[str, list[float]]:
    """Column name -> values; blank cells become NaN."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = defaultdict(list)
        for row in reader:
            for key, val in row.items():
                cols[key].append(float(val) if val not in ("", None) else math.nan)
    return dict(cols)


def plot_curves(series: dict[str, dict[str, list[float]]], metric: str, out_path, title: str | None = None) -> Path:
    """One line per labelled series of ``metric`` against round."""
    out_path = Path(out_path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, cols in sorted(series.items()):
            if metric in cols:
                ax.plot(cols["round"], cols[metric], label=label, linewidth=1.2)
        ax.set_xlabel("round")
        ax.set_ylabel(metric.replace("hr", "HR@10").replace("ndcg", "nDCG@10"))
        if title:
            ax.set_title(title)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return out_path


def render_dir(directory, metrics=("hr", "ndcg")) -> list[Path]:
    """Plot every per-cell CSV in ``directory`` (one figure per metric, plus group metrics)."""
    directory = Path(directory)
    series = {}
    for path in sorted(directory.glob("*.csv")):
        if path.name.startswith("summary") or path.name.endswith(".long.csv"):
            continue
        series[path.stem] = read_metrics(path)
    if not series:
        return []
    written = [plot_curves(series, m, directory / f"{m}.png") for m in metrics]
    group_cols = sorted({c for cols in series.values() for c in cols if c.startswith("hr_")})
    for col in group_cols:
        written.append(plot_curves(series, col, directory / f"{col}.png", title=col[3:]))
    return written
