"""Attention-module usefulness heuristic.

Train once with every attention site's focal weight initialized to zero,
record the weight after each epoch, and at convergence (the best-validation
epoch) keep only the sites whose weight reached the threshold (default
0.2).  Sites that stay near zero were neutral or harmful and are pruned;
the final model is rebuilt with the kept sites at focal init 1 and
retrained from scratch under the same seed protocol.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .losses import LossSpec
from .network import AttentionPlacement, NetworkConfig, build_unet
from .training import History, MetricsReport, TrainConfig, evaluate, fit

DEFAULT_THRESHOLD = 0.2


@dataclass
class FocalTrace:
    """Per-epoch series of one site's focal weight, up to convergence."""

    placement: AttentionPlacement
    epochs: list
    weights: list

    def __post_init__(self):
        if len(self.epochs) != len(self.weights) or not self.epochs:
            raise ValueError("trace needs matching, non-empty epochs and weights")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("trace epochs must be strictly increasing")

    @property
    def final(self) -> float:
        return self.weights[-1]

    def to_json_dict(self) -> dict:
        return {"placement": self.placement.to_json_dict(),
                "epochs": list(self.epochs),
                "weights": list(self.weights),
                "final": self.final}

    @classmethod
    def from_json_dict(cls, d: dict) -> "FocalTrace":
        return cls(placement=AttentionPlacement.from_json_dict(d["placement"]),
                   epochs=list(d["epochs"]), weights=list(d["weights"]))


@dataclass
class SelectionReport:
    traces: list
    threshold: float
    kept: tuple
    removed: tuple

    @classmethod
    def partition(cls, traces, threshold: float) -> "SelectionReport":
        """Split placements by final weight: kept iff final >= threshold.

        The raw (possibly negative) weight is compared, so negative finals
        are always removed.
        """
        kept = tuple(sorted(t.placement for t in traces if t.final >= threshold))
        removed = tuple(sorted(t.placement for t in traces if t.final < threshold))
        return cls(traces=list(traces), threshold=threshold,
                   kept=kept, removed=removed)

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "traces": [t.to_json_dict() for t in self.traces],
            "kept": [p.to_json_dict() for p in self.kept],
            "removed": [p.to_json_dict() for p in self.removed],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SelectionReport":
        return cls(
            traces=[FocalTrace.from_json_dict(t) for t in d["traces"]],
            threshold=float(d["threshold"]),
            kept=tuple(AttentionPlacement.from_json_dict(p) for p in d["kept"]),
            removed=tuple(AttentionPlacement.from_json_dict(p) for p in d["removed"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def traces_from_history(history: History, placements) -> list:
    """Build per-placement traces from a training history, truncated at the
    convergence (best-validation) epoch."""
    end = history.best_epoch
    by_key = {p.key: p for p in placements}
    traces = []
    for key in sorted(by_key):
        epochs, weights = [], []
        for entry in history.entries:
            if entry["epoch"] > end:
                break
            epochs.append(entry["epoch"])
            weights.append(entry["focal"][key])
        traces.append(FocalTrace(by_key[key], epochs, weights))
    return traces


def run_selection(net_config: NetworkConfig, splits, loss_spec: LossSpec,
                  train_config: TrainConfig,
                  threshold: float = DEFAULT_THRESHOLD):
    """Zero-init monitoring run; returns (SelectionReport, History).

    Every configured placement is coerced to focal init 0 for the run;
    weights are read off the live model at the end of each epoch.
    """
    placements = tuple(replace(p, focal="init0") for p in net_config.placements)
    config = replace(net_config, placements=placements)
    model = build_unet(config)
    train_split, val_split = splits[0], splits[1]
    model, history = fit(model, train_split, val_split, loss_spec, train_config)
    traces = traces_from_history(history, placements)
    return SelectionReport.partition(traces, threshold), history


def finalize(report: SelectionReport, net_config: NetworkConfig, splits,
             loss_spec: LossSpec, train_config: TrainConfig):
    """Retrain from scratch with only the kept sites, at focal init 1.

    Returns (model, MetricsReport on the test split, History).
    """
    placements = tuple(replace(p, focal="init1") for p in report.kept)
    config = replace(net_config, placements=placements)
    model = build_unet(config)
    train_split, val_split, test_split = splits
    model, history = fit(model, train_split, val_split, loss_spec, train_config)
    metrics = evaluate(model, test_split)
    return model, metrics, history
