"""SVG figures written next to the delimited outputs.

The CSV/TSV files are the contract; these charts are a convenience. SVG
output is made byte-stable (fixed hash salt, no date metadata).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "hmdlf",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (6.4, 3.2),
}
PALETTE = ["#1F608B", "#E6A355", "#C76048", "#5B8C5A", "#7A6FA3", "#8C8C8C", "#3FA7A3", "#B8860B", "#444444"]


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def plot_predictions(timestamps, actual, predicted, path, title: str = "") -> Path:
    """Observed vs predicted flow over the test period."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        x = np.arange(len(actual))
        ax.plot(x, actual, color=PALETTE[0], lw=0.8, label="observed")
        ax.plot(x, predicted, color=PALETTE[2], lw=0.8, label="predicted")
        ticks = np.linspace(0, len(x) - 1, 5).astype(int) if len(x) > 1 else [0]
        ax.set_xticks(ticks)
        ax.set_xticklabels([str(timestamps[i])[:10] for i in ticks])
        ax.set_ylabel("flow")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_curves(epochs, train_mse, val_mse, path, best_epoch: int | None = None) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(epochs, train_mse, color=PALETTE[0], label="train")
        ax.plot(epochs, val_mse, color=PALETTE[2], label="validation")
        if best_epoch:
            ax.axvline(best_epoch, color=PALETTE[5], ls="--", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE (normalised)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_sweep(settings, table: dict[str, list[float]], path, xlabel: str = "lookup size") -> Path:
    """One line per model: RMSE across a swept setting."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for i, (name, values) in enumerate(table.items()):
            ax.plot(settings, values, marker="o", ms=3, color=PALETTE[i % len(PALETTE)], label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("RMSE")
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)
