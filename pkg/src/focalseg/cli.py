"""Command-line interface.

Commands: train, evaluate, select, render-fdpt, derive-loss, plot-traces.
Exit code 1 marks configuration/input errors, 2 runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .distance import (distance_penalty, distance_transform,
                       focal_distance_penalty, render_heatmap)
from .errors import (ConfigError, InvalidEpsilon, InvalidFraction, MissingPair,
                     NoBoundary, TooSmall, UnknownLoss, UnreadableImage)
from .experiment import load_config, run_evaluate, run_select, run_train
from .losses import derive_loss
from .plotting import plot_history_traces
from .selection import DEFAULT_THRESHOLD
from .training import History

CONFIG_ERRORS = (ConfigError, UnknownLoss, NoBoundary, MissingPair,
                 UnreadableImage, InvalidEpsilon, InvalidFraction, TooSmall,
                 FileNotFoundError)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--output-dir", help="override the config output_dir")
    parser.add_argument("--max-epochs", type=int, help="override train.max_epochs")


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for key in ("seed", "output_dir", "max_epochs", "threshold"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def cmd_train(args) -> int:
    config = load_config(args.config, _overrides(args))
    result = run_train(config)
    m = result["metrics"]
    print(f"train: wrote {result['output_dir']} "
          f"(mean DSC {m.mean_dsc:.4f}, precision {m.mean_precision:.4f}, "
          f"recall {m.mean_recall:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.config, _overrides(args))
    result = run_evaluate(config, args.checkpoint)
    m = result["metrics"]
    print(f"evaluate: mean DSC {m.mean_dsc:.4f}, precision "
          f"{m.mean_precision:.4f}, recall {m.mean_recall:.4f}")
    return 0


def cmd_select(args) -> int:
    config = load_config(args.config, _overrides(args))
    result = run_select(config)
    report, m = result["report"], result["metrics"]
    kept = ", ".join(p.key for p in report.kept) or "none"
    removed = ", ".join(p.key for p in report.removed) or "none"
    print(f"select: kept [{kept}] removed [{removed}] "
          f"(threshold {report.threshold:g}); final mean DSC {m.mean_dsc:.4f}")
    return 0


def cmd_render_fdpt(args) -> int:
    from PIL import Image

    try:
        mask = np.asarray(Image.open(args.mask).convert("L"))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise UnreadableImage(f"cannot read mask {args.mask}: {exc}") from exc
    mask = (mask > 0).astype(np.uint8)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dpt = distance_penalty(distance_transform(mask))
    for eps in args.epsilon:
        fdpt = focal_distance_penalty(dpt, eps)
        path = out_dir / f"fdpt_eps{eps:g}.png"
        render_heatmap(fdpt, path)
        print(f"render-fdpt: wrote {path}")
    return 0


def cmd_derive_loss(args) -> int:
    spec = derive_loss(args.name)
    print(json.dumps(spec.to_json_dict(), indent=2, sort_keys=True))
    return 0


def cmd_plot_traces(args) -> int:
    history = History.from_csv(args.history)
    if not history.focal_keys:
        raise ConfigError(f"{args.history} has no focal weight columns")
    paths = plot_history_traces(history, args.threshold, args.out_dir)
    for p in paths:
        print(f"plot-traces: wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="focalseg",
        description="Boundary-weighted focal segmentation losses, focal "
                    "attention U-Nets, and attention-module selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    _add_config_arguments(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    _add_config_arguments(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: <output_dir>/model.ckpt)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select", help="zero-init attention selection, prune, retrain")
    _add_config_arguments(p)
    p.add_argument("--threshold", type=float,
                   help=f"prune threshold on the final focal weight "
                        f"(default {DEFAULT_THRESHOLD})")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("render-fdpt", help="render boundary penalty heatmaps for a mask")
    p.add_argument("mask", help="binary mask image (nonzero = foreground)")
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.1, 1.0, 10.0],
                   help="focus exponents to render (default: 0.1 1 10)")
    p.add_argument("--out-dir", default=".", help="directory for the PNGs")
    p.set_defaults(func=cmd_render_fdpt)

    p = sub.add_parser("derive-loss", help="print the hyperparameter fixing for a named loss")
    p.add_argument("name", help="e.g. dice, ce, dice+ce, tversky, focal, ufl, ufl+fdpt")
    p.set_defaults(func=cmd_derive_loss)

    p = sub.add_parser("plot-traces", help="plot focal weight traces from a history CSV")
    p.add_argument("history", help="history.csv written by train/select")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out-dir", default=".", help="directory for the PNGs")
    p.set_defaults(func=cmd_plot_traces)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"focalseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"focalseg {args.command}: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
