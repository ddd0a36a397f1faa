import math

import numpy as np
import pytest
import torch

from focalseg.data import SplitSpec, split, synth_blobs
from focalseg.losses import LossSpec
from focalseg.network import AttentionPlacement, NetworkConfig, build_unet
from focalseg.training import (EarlyStopping, History, MetricsReport,
                               PlateauScheduler, TrainConfig, evaluate, fit,
                               image_metrics)


# --- callback state machines -------------------------------------------------

def test_plateau_constant_loss_drops_at_26():
    sched = PlateauScheduler(1e-3, factor=0.1, patience=25, min_delta=1e-4)
    lrs = [sched.step(1.0) for _ in range(60)]
    assert all(lr == 1e-3 for lr in lrs[:25])          # epochs 1..25
    assert lrs[25] == pytest.approx(1e-4)              # epoch 26
    # counter resets after the drop: next drop 25 epochs later, at epoch 51
    assert all(lr == pytest.approx(1e-4) for lr in lrs[26:50])
    assert lrs[50] == pytest.approx(1e-5)


def test_plateau_improvement_resets_counter():
    sched = PlateauScheduler(1.0, factor=0.5, patience=3, min_delta=1e-4)
    losses = [1.0, 0.9, 0.9, 0.9, 0.8]  # improvement at epoch 5 resets
    for loss in losses:
        lr = sched.step(loss)
    assert lr == 1.0
    for loss in [0.8, 0.8]:
        lr = sched.step(loss)
    assert lr == 1.0
    assert sched.step(0.8) == 0.5  # third stale epoch triggers


def test_plateau_min_delta_semantics():
    # binary-exact values so the >= min_delta comparison is unambiguous
    sched = PlateauScheduler(1.0, factor=0.5, patience=2, min_delta=0.25)
    sched.step(1.0)
    sched.step(0.75)   # improvement of exactly min_delta counts
    assert sched.stale == 0 and sched.best == 0.75
    sched.step(0.625)  # improvement of 0.125 < min_delta is stale
    assert sched.stale == 1 and sched.best == 0.75


def test_early_stopping_constant_loss_stops_at_51():
    stopper = EarlyStopping(patience=50, min_delta=1e-4)
    fired = [stopper.step(2.0) for _ in range(51)]
    assert not any(fired[:50])
    assert fired[50]


def test_early_stopping_reset_on_improvement():
    stopper = EarlyStopping(patience=3, min_delta=1e-4)
    assert not stopper.step(1.0)
    assert not stopper.step(1.0)
    assert not stopper.step(1.0)
    assert not stopper.step(0.5)   # improvement resets
    assert not stopper.step(0.5)
    assert not stopper.step(0.5)
    assert stopper.step(0.5)


# --- metrics ------------------------------------------------------------------

def test_image_metrics_perfect_and_complement():
    truth = np.zeros((6, 6), dtype=bool)
    truth[2:4, 2:4] = True
    assert image_metrics(truth, truth) == (1.0, 1.0, 1.0)
    assert image_metrics(~truth, truth) == (0.0, 0.0, 0.0)


def test_image_metrics_counts_example():
    # TP=8, FP=2, FN=2 -> DSC 0.8, precision 0.8, recall 0.8
    truth = np.zeros(16, dtype=bool)
    truth[:10] = True
    pred = np.zeros(16, dtype=bool)
    pred[:8] = True
    pred[10:12] = True
    dsc, precision, recall = image_metrics(pred.reshape(4, 4), truth.reshape(4, 4))
    assert (dsc, precision, recall) == (0.8, 0.8, 0.8)


def test_image_metrics_empty_conventions():
    empty = np.zeros((4, 4), dtype=bool)
    some = empty.copy()
    some[0, 0] = True
    assert image_metrics(empty, empty) == (1.0, 1.0, 1.0)
    dsc, precision, _ = image_metrics(some, empty)
    assert dsc == 0.0 and precision == 0.0


def test_dsc_is_harmonic_mean_of_precision_recall():
    rng = np.random.default_rng(2)
    for _ in range(50):
        truth = rng.random((8, 8)) < 0.4
        pred = rng.random((8, 8)) < 0.4
        dsc, p, r = image_metrics(pred, truth)
        if p + r > 0 and (truth.any() or pred.any()):
            assert abs(dsc - 2 * p * r / (p + r)) < 1e-12


def test_metrics_report_means():
    report = MetricsReport.from_per_image([(1.0, 1.0, 1.0), (0.5, 0.25, 0.75)])
    assert report.mean_dsc == 0.75
    assert report.mean_precision == 0.625
    assert report.mean_recall == 0.875
    doc = report.to_json_dict()
    assert len(doc["per_image"]) == 2


class OracleModel(torch.nn.Module):
    """Returns the exact one-hot mask for each test image, in order."""

    def __init__(self, masks):
        super().__init__()
        self.masks = list(masks)
        self.calls = 0
        self.config = type("C", (), {"classes": 2})()

    def forward(self, x):
        mask = torch.from_numpy(self.masks[self.calls].astype(np.int64))
        self.calls += 1
        probs = torch.nn.functional.one_hot(mask, 2).permute(2, 0, 1).float()
        return probs.unsqueeze(0)


def test_evaluate_with_oracle_model():
    ds = synth_blobs(4, 32, 0.15, seed=0)
    model = OracleModel([s.mask for s in ds.samples])
    report = evaluate(model, ds)
    assert report.mean_dsc == 1.0
    assert report.mean_precision == 1.0
    assert report.mean_recall == 1.0


# --- fit ------------------------------------------------------------------------

def tiny_setup(seed=0, placements=(), n=14, epochs=3):
    ds = synth_blobs(n, 32, 0.15, seed=seed)
    splits = split(ds, SplitSpec(seed=seed))
    net = NetworkConfig(base_channels=4, placements=placements, seed=seed)
    cfg = TrainConfig(max_epochs=epochs, seed=seed, batch_size=2,
                      plateau_patience=25, early_stop_patience=50)
    return splits, net, cfg


def test_fit_history_and_checkpoint_optimality():
    splits, net, cfg = tiny_setup(placements=(AttentionPlacement("SE", 5, "init0"),))
    model = build_unet(net)
    spec = LossSpec(lam=0.5, delta=0.6, gamma=0.2)
    model, history = fit(model, splits[0], splits[1], spec, cfg)
    assert len(history.entries) <= cfg.max_epochs
    assert history.focal_keys == ("SE5",)
    val = history.column("val_loss")
    assert history.best_epoch == int(np.argmin(val)) + 1
    # restored model's focal weight matches the best epoch's recorded value
    best_entry = history.entries[history.best_epoch - 1]
    assert model.focal_values()["SE5"] == best_entry["focal"]["SE5"]
    for e in history.entries:
        assert math.isfinite(e["train_loss"]) and math.isfinite(e["val_loss"])


def test_fit_deterministic():
    spec = LossSpec(lam=0.5, delta=0.6, gamma=0.2)
    runs = []
    for _ in range(2):
        splits, net, cfg = tiny_setup(seed=4, epochs=2)
        model = build_unet(net)
        _, history = fit(model, splits[0], splits[1], spec, cfg)
        runs.append([(e["train_loss"], e["val_loss"]) for e in history.entries])
    assert runs[0] == runs[1]


def test_fit_with_boundary_weights_runs():
    splits, net, cfg = tiny_setup(seed=5, epochs=2)
    model = build_unet(net)
    spec = LossSpec(lam=0.5, delta=0.6, gamma=0.2, epsilon=0.1)
    model, history = fit(model, splits[0], splits[1], spec, cfg)
    assert len(history.entries) == 2


def test_fit_rejects_empty_split():
    splits, net, cfg = tiny_setup()
    model = build_unet(net)
    empty = splits[0].subset([], "empty")
    with pytest.raises(ValueError):
        fit(model, empty, splits[1], LossSpec(), cfg)


def test_history_csv_round_trip(tmp_path):
    splits, net, cfg = tiny_setup(placements=(AttentionPlacement("AG", 2, "init0"),),
                                  epochs=2)
    model = build_unet(net)
    _, history = fit(model, splits[0], splits[1], LossSpec(), cfg)
    path = tmp_path / "history.csv"
    history.to_csv(path)
    again = History.from_csv(path)
    assert again.focal_keys == history.focal_keys
    for a, b in zip(again.entries, history.entries):
        assert a["epoch"] == b["epoch"]
        assert a["train_loss"] == b["train_loss"]  # exact via repr round trip
        assert a["val_loss"] == b["val_loss"]
        assert a["focal"] == b["focal"]
