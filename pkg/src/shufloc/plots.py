"""Figure rendering for training and evaluation reports.

All functions write PNG files and never open windows; the non-interactive
backend is forced before pyplot is imported so this works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_loss_curves", "render_map_curve", "render_ablation"]

_TERMS = ["total", "global", "local", "intra", "inter", "guide"]


def render_loss_curves(metrics: list[dict], path: str | Path) -> None:
    """Loss terms and accuracy across epochs, two stacked panels."""
    fig, (ax_loss, ax_acc) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    epochs = [row["epoch"] for row in metrics]
    for term in _TERMS:
        values = [row.get(term, 0.0) for row in metrics]
        ax_loss.plot(epochs, values, label=term, linewidth=1.5 if term == "total" else 1.0)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right", fontsize="small", ncol=2)
    ax_loss.grid(True, alpha=0.3)
    accuracy = [row.get("accuracy", 0.0) for row in metrics]
    ax_acc.plot(epochs, accuracy, color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_map_curve(report, path: str | Path) -> None:
    """mAP (bold) and per-class AP versus IoU threshold."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for class_id, aps in sorted(report.per_class.items()):
        ax.plot(report.thresholds, aps, alpha=0.45, linewidth=1.0, label=f"class {class_id}")
    ax.plot(
        report.thresholds,
        report.map_per_threshold,
        color="black",
        linewidth=2.2,
        marker="o",
        label="mAP",
    )
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("average precision")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation(rows, path: str | Path) -> None:
    """Average mAP per ablation configuration as a labeled bar chart."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    names = [row.name for row in rows]
    values = [row.average_map for row in rows]
    bars = ax.bar(range(len(rows)), values, color="tab:blue")
    ax.bar_label(bars, fmt="%.3f", padding=2, fontsize="small")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("average mAP")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
