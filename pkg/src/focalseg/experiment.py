"""Experiment configuration and run orchestration for the CLI.

A run is described by one JSON config file with dataset, network, loss and
train sections plus an output directory.  Every command validates the whole
config before doing any work and writes a manifest capturing the resolved
settings, so identical config + seed reproduce identical outputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .data import Dataset, SplitSpec, load_dataset, split, synth_blobs, write_manifest
from .errors import ConfigError
from .losses import LossSpec
from .network import NetworkConfig, build_unet, load_checkpoint, save_checkpoint
from .plotting import plot_selection_traces, plot_training_curves
from .selection import DEFAULT_THRESHOLD, finalize, run_selection
from .training import TrainConfig, evaluate, fit

OUTPUT_ROOT_ENV = "FOCALSEG_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    dataset: dict
    network: NetworkConfig
    loss: LossSpec
    train: TrainConfig
    split: SplitSpec
    output_dir: Path
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "dataset": self.dataset,
            "split": {"dev_fraction": self.split.dev_fraction,
                      "train_fraction": self.split.train_fraction,
                      "seed": self.split.seed,
                      "fixed_test": self.split.fixed_test},
            "network": self.network.to_json_dict(),
            "loss": self.loss.to_json_dict(),
            "train": self.train.to_json_dict(),
            "selection": {"threshold": self.threshold},
        }


def _resolve_output_dir(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config file; raises ConfigError on any problem."""
    overrides = overrides or {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")

    seed = int(overrides.get("seed", doc.get("seed", 0)))
    try:
        dataset = doc.get("dataset")
        if not isinstance(dataset, dict) or not ("synth" in dataset or "path" in dataset):
            raise ConfigError(
                "dataset section must contain either 'synth' params or a 'path'")
        split_doc = dict(doc.get("split", {}))
        split_doc.setdefault("seed", seed)
        fixed_test = dataset.get("fixed_test")
        split_spec = SplitSpec(
            dev_fraction=float(split_doc.get("dev_fraction", 0.8)),
            train_fraction=float(split_doc.get("train_fraction", 0.8)),
            seed=int(split_doc["seed"]),
            fixed_test=None if fixed_test is None else int(fixed_test),
        )
        net_doc = dict(doc.get("network", {}))
        net_doc.setdefault("seed", seed)
        network = NetworkConfig.from_json_dict(net_doc)
        loss = LossSpec.from_json_dict(doc.get("loss", {}))
        train_doc = dict(doc.get("train", {}))
        train_doc.setdefault("seed", seed)
        if "max_epochs" in overrides:
            train_doc["max_epochs"] = overrides["max_epochs"]
        train = TrainConfig.from_json_dict(train_doc)
        threshold = float(overrides.get(
            "threshold", doc.get("selection", {}).get("threshold", DEFAULT_THRESHOLD)))
        output_dir = overrides.get("output_dir") or doc.get("output_dir")
        if not output_dir:
            raise ConfigError("config must set output_dir (or pass --output-dir)")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig(
        dataset=dataset, network=network, loss=loss, train=train,
        split=split_spec, output_dir=_resolve_output_dir(str(output_dir)),
        threshold=threshold, seed=seed,
    )


def build_dataset(config: ExperimentConfig) -> Dataset:
    ds_cfg = config.dataset
    if "synth" in ds_cfg:
        params = dict(ds_cfg["synth"])
        params.setdefault("seed", config.seed)
        try:
            return synth_blobs(**params)
        except TypeError as exc:
            raise ConfigError(f"bad synth dataset params: {exc}") from exc
    image_size = ds_cfg.get("image_size", 64)
    return load_dataset(ds_cfg["path"], image_size)


def _write_manifest(out_dir: Path, command: str, config: ExperimentConfig,
                    outputs: list) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "config": config.to_json_dict(),
        "outputs": sorted(str(p) for p in outputs),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def _write_metrics(path, metrics) -> None:
    with open(path, "w") as fh:
        json.dump(metrics.to_json_dict(), fh, indent=2, sort_keys=True)


def run_train(config: ExperimentConfig) -> dict:
    """Train one model; writes checkpoint, history CSV, metrics and figures."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(config)
    splits = split(dataset, config.split)
    write_manifest(out / "dataset_manifest.json", dataset, splits)

    model = build_unet(config.network)
    model, history = fit(model, splits[0], splits[1], config.loss, config.train)
    metrics = evaluate(model, splits[2])

    save_checkpoint(model, out / "model.ckpt")
    history.to_csv(out / "history.csv")
    plot_training_curves(history, out / "training_curves.png")
    _write_metrics(out / "metrics.json", metrics)
    outputs = ["model.ckpt", "history.csv", "training_curves.png",
               "metrics.json", "dataset_manifest.json"]
    _write_manifest(out, "train", config, outputs)
    return {"metrics": metrics, "history": history, "output_dir": out}


def run_evaluate(config: ExperimentConfig, checkpoint=None) -> dict:
    """Evaluate a checkpoint on the config's test split."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(checkpoint) if checkpoint else out / "model.ckpt"
    model = load_checkpoint(ckpt)
    dataset = build_dataset(config)
    splits = split(dataset, config.split)
    metrics = evaluate(model, splits[2])
    _write_metrics(out / "metrics.json", metrics)
    _write_manifest(out, "evaluate", config, ["metrics.json"])
    return {"metrics": metrics, "output_dir": out}


def run_select(config: ExperimentConfig) -> dict:
    """Zero-init selection run, prune, retrain, and evaluate."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(config)
    splits = split(dataset, config.split)
    write_manifest(out / "dataset_manifest.json", dataset, splits)

    report, sel_history = run_selection(config.network, splits, config.loss,
                                        config.train, config.threshold)
    report.save(out / "selection_report.json")
    sel_history.to_csv(out / "selection_history.csv")
    trace_paths = plot_selection_traces(report, out)

    model, metrics, fin_history = finalize(report, config.network, splits,
                                           config.loss, config.train)
    save_checkpoint(model, out / "model.ckpt")
    fin_history.to_csv(out / "history.csv")
    plot_training_curves(fin_history, out / "training_curves.png")
    _write_metrics(out / "metrics.json", metrics)
    outputs = ["selection_report.json", "selection_history.csv", "model.ckpt",
               "history.csv", "training_curves.png", "metrics.json",
               "dataset_manifest.json"] + [p.name for p in trace_paths]
    _write_manifest(out, "select", config, outputs)
    return {"report": report, "metrics": metrics, "output_dir": out}
