"""Series files and matplotlib figures written next to the numeric outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Drop the version stamp so figures are byte-stable across matplotlib installs.
PNG_METADATA = {"Software": None}


def write_series(path, xs, ys, x_name: str = "x", y_name: str = "y") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([x_name, y_name])
        for x, y in zip(xs, ys):
            w.writerow([x, repr(float(y))])
    return path


def loss_curves(path, series: dict[str, tuple[list, list]], title: str,
                xlabel: str = "step", ylabel: str = "loss") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    for name, (xs, ys) in series.items():
        ax.plot(xs, ys, label=name, linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return Path(path)


def grouped_bars(path, groups: list[str], series: dict[str, list[float]], title: str,
                 ylabel: str, reference: float | None = None) -> Path:
    """One cluster per group, one bar per series; optional dashed reference line."""
    fig, ax = plt.subplots(figsize=(6, 3.4), dpi=100)
    width = 0.8 / max(len(series), 1)
    for j, (name, values) in enumerate(series.items()):
        xs = [i + (j - (len(series) - 1) / 2) * width for i in range(len(groups))]
        ax.bar(xs, values, width=width, label=name)
    if reference is not None:
        ax.axhline(reference, color="black", linestyle="--", linewidth=0.8, label="chance")
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(groups)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    return Path(path)
