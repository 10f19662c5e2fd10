"""Figures for run reports.

Every figure is written as a PNG together with a long-format CSV
(``series,x,y``) holding exactly the plotted points, so the data can be
re-plotted with any tool.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PLOT_COLUMNS = ("series", "x", "y")

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

Series = Mapping[str, tuple[Sequence[float], Sequence[float]]]


def write_plot_data(series: Series, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PLOT_COLUMNS)
        for name, (xs, ys) in series.items():
            for x, y in zip(xs, ys):
                w.writerow([name, repr(float(x)), repr(float(y))])


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def convergence_figure(series: Series, path, title: str = "") -> Path:
    """NashConv against iteration, one line per method, log y-axis."""
    path = Path(path)
    write_plot_data(series, path.with_suffix(".csv"))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, (xs, ys) in series.items():
            ax.plot(xs, ys, label=name, lw=1.4)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("NashConv (median over seeds)")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def tradeoff_figure(points: Mapping[str, tuple[float, float]], path, title: str = "") -> Path:
    """Total best-response episodes (millions) against minimum NashConv."""
    path = Path(path)
    write_plot_data({k: ([x], [y]) for k, (x, y) in points.items()}, path.with_suffix(".csv"))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, (x, y) in points.items():
            ax.scatter([x / 1e6], [y], s=36)
            ax.annotate(name, (x / 1e6, y), textcoords="offset points", xytext=(5, 4), fontsize=8)
        ax.set_xlabel("total best-response episodes (millions)")
        ax.set_ylabel("minimum NashConv (median over seeds)")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def delta_sweep_figure(series: Series, path, baseline: float | None = None, title: str = "") -> Path:
    """Minimum NashConv against exploration rate, one line per exploration kind."""
    path = Path(path)
    data = dict(series)
    if baseline is not None:
        xs = sorted({x for v in series.values() for x in v[0]})
        data["naive"] = (xs, [baseline] * len(xs))
    write_plot_data(data, path.with_suffix(".csv"))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, (xs, ys) in series.items():
            ax.plot(xs, ys, marker="o", label=name)
        if baseline is not None:
            ax.axhline(baseline, color="0.4", ls="--", lw=1, label="naive (delta = 0)")
        ax.set_xlabel("exploration rate delta")
        ax.set_ylabel("minimum NashConv (median over seeds)")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)
