"""Figure rendering for report artifacts; every function writes a file."""
from __future__ import annotations

from typing import Dict, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

FIG_SIZE = (6.0, 3.8)


def save_trajectory_overlay(path, gt_series, run_series: Mapping[str, tuple],
                            attack_start: Optional[int] = None,
                            axis_label: str = "lateral position"):
    """Target-axis position over frames: ground truth vs perceived runs.

    gt_series is (frames, values); run_series maps a label to the same.
    """
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    ax.plot(gt_series[0], gt_series[1], "k-", lw=2, label="ground truth")
    for label, (frames, values) in run_series.items():
        ax.plot(frames, values, lw=1.2, marker=".", ms=3, label=label)
    if attack_start is not None:
        ax.axvline(attack_start, color="red", ls="--", lw=1, label="attack start")
    ax.set_xlabel("frame")
    ax.set_ylabel(axis_label)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_deviation_histogram(path, rows: Sequence[tuple],
                             thresholds: Optional[Sequence[float]] = None):
    """Per-axis histograms of buffered deviations with clip bounds marked.

    rows are (frame, axis, value) as exported by the deviation buffer.
    """
    axes_present = sorted({axis for _, axis, _ in rows}) or [0]
    fig, axs = plt.subplots(1, len(axes_present),
                            figsize=(3.2 * len(axes_present), 3.0), squeeze=False)
    for k, axis in enumerate(axes_present):
        ax = axs[0][k]
        values = [value for _, a, value in rows if a == axis]
        if values:
            ax.hist(values, bins=30, color="steelblue", alpha=0.8)
        if thresholds is not None and axis < len(thresholds):
            ax.axvline(thresholds[axis], color="red", ls="--", lw=1)
        ax.set_title(f"axis {axis}", fontsize=9)
        ax.set_xlabel("|deviation|")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metric_bars(path, labels: Sequence[str], values: Sequence[float],
                     ylabel: str = "FD max", title: str = ""):
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    ax.bar(range(len(labels)), values, color="steelblue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_growth_curves(path, x: Sequence[float], series: Dict[str, Sequence[float]],
                       xlabel: str = "hide-block length",
                       ylabel: str = "terminal deviation"):
    fig, ax = plt.subplots(figsize=FIG_SIZE)
    for label, values in series.items():
        ax.plot(x, values, marker="o", ms=4, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
