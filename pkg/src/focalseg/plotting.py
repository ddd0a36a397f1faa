"""Matplotlib renderers for run reports: focal-weight traces and loss curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def plot_trace(epochs, weights, threshold: float, path, title: str = "",
               kept: bool | None = None) -> None:
    """One focal-weight trace with the prune threshold marked."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    color = "tab:green" if kept else "tab:gray"
    if kept is None:
        color = "tab:blue"
    ax.plot(epochs, weights, color=color, lw=1.5)
    ax.axhline(threshold, color="tab:red", ls="--", lw=1.0,
               label=f"threshold {threshold:g}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("focal weight")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_selection_traces(report, out_dir) -> list:
    """One PNG per placement; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kept_keys = {p.key for p in report.kept}
    paths = []
    for trace in report.traces:
        key = trace.placement.key
        path = out_dir / f"trace_{key}.png"
        kept = key in kept_keys
        plot_trace(trace.epochs, trace.weights, report.threshold, path,
                   title=f"{key}  final={trace.final:.3f} "
                         f"({'kept' if kept else 'removed'})",
                   kept=kept)
        paths.append(path)
    return paths


def plot_history_traces(history, threshold: float, out_dir) -> list:
    """Trace plots for every focal column of a training history."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs = history.column("epoch")
    paths = []
    for key in history.focal_keys:
        weights = [e["focal"][key] for e in history.entries]
        path = out_dir / f"trace_{key}.png"
        plot_trace(epochs, weights, threshold, path,
                   title=f"{key}  final={weights[-1]:.3f}")
        paths.append(path)
    return paths


def plot_training_curves(history, path) -> None:
    """Train/validation loss with the learning rate on a twin axis."""
    epochs = history.column("epoch")
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(epochs, history.column("train_loss"), label="train loss", lw=1.2)
    ax.plot(epochs, history.column("val_loss"), label="val loss", lw=1.2)
    if history.best_epoch:
        ax.axvline(history.best_epoch, color="tab:green", ls=":", lw=1.0,
                   label=f"best epoch {history.best_epoch}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, history.column("lr"), color="tab:red", lw=0.8, alpha=0.6)
    ax2.set_ylabel("lr", color="tab:red")
    ax2.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
