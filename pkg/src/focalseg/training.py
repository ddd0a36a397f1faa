"""Training loop, schedule callbacks, and evaluation metrics.

Adam with an initial learning rate of 1e-3, a reduce-on-plateau schedule
(factor 0.1 after 25 stale epochs) and early stopping after 50 stale
epochs; an epoch "improves" when the validation loss drops by at least
``min_delta`` (1e-4).  The returned model is the checkpoint with the
minimum validation loss seen during the run.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import Dataset, augment, normalize
from .distance import class_weight_maps
from .errors import NonFiniteLoss
from .losses import LossSpec, evaluate_spec


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    plateau_factor: float = 0.1
    plateau_patience: int = 25
    early_stop_patience: int = 50
    min_delta: float = 1e-4
    batch_size: int = 1
    max_epochs: int = 1000
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.plateau_patience <= 0 or self.early_stop_patience <= 0:
            raise ValueError("patience values must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "lr0": self.lr0, "plateau_factor": self.plateau_factor,
            "plateau_patience": self.plateau_patience,
            "early_stop_patience": self.early_stop_patience,
            "min_delta": self.min_delta, "batch_size": self.batch_size,
            "max_epochs": self.max_epochs, "seed": self.seed,
            "augment": self.augment,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class PlateauScheduler:
    """Multiply the lr by ``factor`` once the loss stalls for ``patience`` epochs."""

    def __init__(self, lr0: float, factor: float = 0.1, patience: int = 25,
                 min_delta: float = 1e-4):
        self.lr = lr0
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.stale = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the lr to use next."""
        if self.best - val_loss >= self.min_delta:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


class EarlyStopping:
    """Signal a stop once the loss stalls for ``patience`` epochs."""

    def __init__(self, patience: int = 50, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.stale = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True means stop after this epoch."""
        if self.best - val_loss >= self.min_delta:
            self.best = val_loss
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


@dataclass
class History:
    """Per-epoch record of losses, learning rate and focal weights."""

    entries: list = field(default_factory=list)
    focal_keys: tuple = ()
    best_epoch: int = 0

    def column(self, name: str) -> list:
        return [e[name] for e in self.entries]

    def to_csv(self, path) -> None:
        cols = ["epoch", "train_loss", "val_loss", "lr"] + \
               [f"focal_{k}" for k in self.focal_keys]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for e in self.entries:
                row = [e["epoch"], repr(e["train_loss"]), repr(e["val_loss"]),
                       repr(e["lr"])]
                row += [repr(e["focal"][k]) for k in self.focal_keys]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "History":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path} is empty")
        focal_keys = tuple(sorted(c[len("focal_"):] for c in rows[0]
                                  if c.startswith("focal_")))
        entries = []
        for r in rows:
            entries.append({
                "epoch": int(r["epoch"]),
                "train_loss": float(r["train_loss"]),
                "val_loss": float(r["val_loss"]),
                "lr": float(r["lr"]),
                "focal": {k: float(r[f"focal_{k}"]) for k in focal_keys},
            })
        return cls(entries=entries, focal_keys=focal_keys)


@dataclass
class MetricsReport:
    """Per-image and averaged overlap metrics on a split."""

    per_image: list  # (dsc, precision, recall) per image
    mean_dsc: float
    mean_precision: float
    mean_recall: float

    @classmethod
    def from_per_image(cls, per_image) -> "MetricsReport":
        arr = np.asarray(per_image, dtype=np.float64).reshape(-1, 3)
        return cls(per_image=[tuple(map(float, row)) for row in arr],
                   mean_dsc=float(arr[:, 0].mean()),
                   mean_precision=float(arr[:, 1].mean()),
                   mean_recall=float(arr[:, 2].mean()))

    def to_json_dict(self) -> dict:
        return {
            "mean_dsc": self.mean_dsc,
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "per_image": [{"dsc": d, "precision": p, "recall": r}
                          for d, p, r in self.per_image],
        }


def _prepare_batch(samples, indices, spec: LossSpec, classes: int,
                   train: bool, cfg: TrainConfig, epoch: int):
    """Normalize (and for training, augment) a handful of samples."""
    images, labels, weights = [], [], []
    for idx in indices:
        s = samples[idx]
        img = normalize(s.image)
        mask = s.mask
        if train and cfg.augment:
            img, mask = augment(img, mask, seed=(cfg.seed, epoch, idx))
        images.append(torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))))
        labels.append(torch.from_numpy(mask.astype(np.int64)))
        if spec.epsilon is not None:
            weights.append(torch.from_numpy(
                class_weight_maps(mask, classes, spec.epsilon)))
    x = torch.stack(images).float()
    y = torch.stack(labels)
    w = torch.stack(weights).float() if weights else None
    return x, y, w


def _epoch_loss(model, samples, order, spec, classes, train, cfg, epoch,
                optimizer=None) -> float:
    total, count = 0.0, 0
    bs = cfg.batch_size
    for start in range(0, len(order), bs):
        idx = order[start:start + bs]
        x, y, w = _prepare_batch(samples, idx, spec, classes, train, cfg, epoch)
        if train:
            optimizer.zero_grad()
            loss = evaluate_spec(model(x), y, spec, w).scalar
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch starting at sample index {idx[0]}")
            loss.backward()
            optimizer.step()
        else:
            with torch.no_grad():
                loss = evaluate_spec(model(x), y, spec, w).scalar
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        total += float(loss.detach()) * len(idx)
        count += len(idx)
    return total / count


def fit(model, train_split: Dataset, val_split: Dataset, loss_spec: LossSpec,
        config: TrainConfig):
    """Train to convergence; returns (best-checkpoint model, History)."""
    if not train_split.samples or not val_split.samples:
        raise ValueError("train and validation splits must be non-empty")
    torch.manual_seed(config.seed)
    classes = model.config.classes
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr0)
    plateau = PlateauScheduler(config.lr0, config.plateau_factor,
                               config.plateau_patience, config.min_delta)
    stopper = EarlyStopping(config.early_stop_patience, config.min_delta)
    focal_keys = tuple(sorted(model.focal_values()))

    history = History(focal_keys=focal_keys)
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = 0
    n_train = len(train_split.samples)

    for epoch in range(1, config.max_epochs + 1):
        lr = plateau.lr
        order = list(np.random.default_rng((config.seed, epoch)).permutation(n_train))
        model.train()
        train_loss = _epoch_loss(model, train_split.samples, order, loss_spec,
                                 classes, True, config, epoch, optimizer)
        model.eval()
        val_loss = _epoch_loss(model, val_split.samples,
                               list(range(len(val_split.samples))), loss_spec,
                               classes, False, config, epoch)
        history.entries.append({
            "epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
            "lr": lr, "focal": model.focal_values(),
        })
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
        new_lr = plateau.step(val_loss)
        if new_lr != lr:
            for group in optimizer.param_groups:
                group["lr"] = new_lr
        if stopper.step(val_loss):
            break

    history.best_epoch = best_epoch
    model.load_state_dict(best_state)
    return model, history


def binary_counts(pred_mask: np.ndarray, true_mask: np.ndarray):
    tp = int(np.count_nonzero(pred_mask & true_mask))
    fp = int(np.count_nonzero(pred_mask & ~true_mask))
    fn = int(np.count_nonzero(~pred_mask & true_mask))
    return tp, fp, fn


def image_metrics(pred_mask: np.ndarray, true_mask: np.ndarray):
    """(dsc, precision, recall) with the empty-mask conventions.

    An empty ground truth with an empty prediction scores (1, 1, 1); any
    other zero denominator scores 0 for that metric.
    """
    tp, fp, fn = binary_counts(pred_mask, true_mask)
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    dsc = 2.0 * tp / (2.0 * tp + fp + fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return dsc, precision, recall


def evaluate(model, test_split: Dataset, threshold: float = 0.5,
             foreground_class: int = 1) -> MetricsReport:
    """Binarize the foreground probability and average per-image metrics."""
    if not test_split.samples:
        raise ValueError("test split must be non-empty")
    model.eval()
    per_image = []
    with torch.no_grad():
        for s in test_split.samples:
            img = normalize(s.image)
            x = torch.from_numpy(np.ascontiguousarray(
                img.transpose(2, 0, 1))).float().unsqueeze(0)
            probs = model(x)[0]
            pred = (probs[foreground_class].numpy() >= threshold)
            per_image.append(image_metrics(pred, s.mask.astype(bool)))
    return MetricsReport.from_per_image(per_image)
