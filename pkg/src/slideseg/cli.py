"""Command-line entry point wiring all modules into reproducible experiments.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
Failures print exactly one machine-readable line to stderr in the form
``ERROR:<kind>:<message>``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import torch

from . import bands, data, harness, metrics
from .errors import DataError, IoError, NumericError, UsageError
from .model import ensemble_average, load_checkpoint, predict_mask

_FORMATS = ("csv", "text")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="slideseg", description="Landslide detection and segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-bands", help="engineer and cache additional bands")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--select", required=True, choices=bands.PRESET_NAMES, help="band selection preset")
    p.add_argument("--overwrite", action="store_true", help="replace an existing cache")

    p = sub.add_parser("stats", help="dataset imbalance statistics")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--format", choices=_FORMATS, default="text", help="output format")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output file")

    p = sub.add_parser("train", help="train one model on the 80/20 split")
    p.add_argument("--config", required=True, help="training config YAML")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--width-scale", type=float, help="scale model channel widths")
    p.add_argument("--overwrite", action="store_true", help="replace an existing run directory")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the holdout split")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--select", choices=bands.PRESET_NAMES, help="band selection override")
    p.add_argument("--seed", type=int, default=42, help="seed of the 80/20 split to evaluate")
    p.add_argument("--format", choices=_FORMATS, default="text", help="report format")
    p.add_argument("--out", help="write the report to this file")
    p.add_argument("--overwrite", action="store_true", help="replace an existing output file")

    p = sub.add_parser("cross-validate", help="k-fold cross-validation of one config")
    p.add_argument("--config", required=True, help="training config YAML")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--folds", type=int, default=5, help="number of folds")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--width-scale", type=float, help="scale model channel widths")
    p.add_argument("--format", choices=_FORMATS, default="text", help="aggregate report format")
    p.add_argument("--overwrite", action="store_true", help="replace an existing run directory")

    p = sub.add_parser("predict", help="write predicted masks for every sample")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--root", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory for masks")
    p.add_argument("--mask-format", choices=("h5", "png8"), default="h5", help="mask file format")
    p.add_argument("--overwrite", action="store_true", help="replace existing mask files")

    return parser


def _refuse_clobber(path: Path, overwrite: bool, what: str):
    if path.exists() and not overwrite:
        raise IoError(f"{what} '{path}' exists; pass --overwrite to replace it")


def emit_report(report: metrics.EvalReport, format: str, out=None) -> None:
    if format == "csv":
        if out is None:
            writer = csv.writer(sys.stdout)
            writer.writerow(metrics.REPORT_COLUMNS)
            writer.writerow(metrics.report_row(report))
        else:
            metrics.write_report_csv(report, out)
    elif format == "text":
        text = metrics.format_report_text(report)
        if out is None:
            print(text)
        else:
            Path(out).write_text(text + "\n")
    else:
        raise UsageError(f"unknown report format '{format}'")


def _apply_overrides(cfg: harness.TrainConfig, args) -> harness.TrainConfig:
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.augment.rng_seed = args.seed
    if getattr(args, "width_scale", None):
        cfg.model = cfg.model.width_scaled(args.width_scale)
    return cfg


def _cmd_prepare_bands(args) -> int:
    index = data.load_dataset(args.root)
    selection = bands.preset(args.select)
    if not selection:
        print("selection 'none' adds no bands; nothing to cache")
        return 0
    out_dir = bands.engineered_dir(index.root_path, selection)
    if out_dir.exists() and any(out_dir.iterdir()):
        _refuse_clobber(out_dir, args.overwrite, "engineered cache")
    harness.build_band_cache(index, selection, overwrite=args.overwrite)
    channels = data.ORIGINAL_BAND_COUNT + len(selection)
    print(f"cached {len(index)} stacks with {channels} bands under {out_dir}")
    return 0


def _cmd_stats(args) -> int:
    index = data.load_dataset(args.root)
    stats = data.dataset_stats(index)
    lo, hi = stats.per_image_positive_rate_range
    if args.format == "csv":
        lines = [
            "samples,landslide_samples,pixel_positive_rate,per_image_rate_min,per_image_rate_max",
            f"{len(index)},{len(index.landslide_ids)},{stats.pixel_positive_rate:.6f},{lo:.6f},{hi:.6f}",
        ]
    else:
        lines = [
            f"Samples: {len(index)}",
            f"Samples with landslides: {len(index.landslide_ids)}",
            f"Pixel positive rate: {stats.pixel_positive_rate:.4%}",
            f"Per-image positive rate range: {lo:.4%} .. {hi:.4%}",
        ]
    text = "\n".join(lines)
    if args.out:
        out = Path(args.out)
        _refuse_clobber(out, args.overwrite, "output file")
        out.write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_train(args) -> int:
    cfg = _apply_overrides(harness.load_train_config(args.config), args)
    run_dir = Path(args.out)
    _refuse_clobber(run_dir / "config.yaml", args.overwrite, "run directory config")
    index = data.load_dataset(args.root)
    train_ids, _ = harness.split_dataset(index, 0.8, cfg.seed)
    result = harness.train(cfg, index, train_ids, run_dir=run_dir)
    print(
        f"trained {cfg.epochs} epochs; best val F1 {result.best_val_f1:.2f} "
        f"at epoch {result.best_epoch}; checkpoint {result.checkpoint_path}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    index = data.load_dataset(args.root)
    _, test_ids = harness.split_dataset(index, 0.8, args.seed)
    report = harness.evaluate(args.ckpt, index, test_ids, band_selection=args.select, split="test")
    if args.out:
        _refuse_clobber(Path(args.out), args.overwrite, "output file")
        emit_report(report, args.format, args.out)
        print(f"wrote report to {args.out}")
    else:
        emit_report(report, args.format)
    return 0


def _cmd_cross_validate(args) -> int:
    cfg = _apply_overrides(harness.load_train_config(args.config), args)
    run_dir = Path(args.out)
    _refuse_clobber(run_dir / "report.csv", args.overwrite, "run directory report")
    index = data.load_dataset(args.root)
    aggregate, _ = harness.cross_validate(cfg, index, k=args.folds, run_dir=run_dir)
    emit_report(aggregate, args.format)
    return 0


def _cmd_predict(args) -> int:
    index = data.load_dataset(args.root)
    model, meta = load_checkpoint(args.ckpt)
    selection_name = meta.get("band_selection", "none")
    store = harness.SampleStore(index, bands.preset(selection_name))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = "png" if args.mask_format == "png8" else "h5"
    with torch.no_grad():
        for sample_id in index.sample_ids:
            path = out_dir / f"mask_{sample_id}.{suffix}"
            _refuse_clobber(path, args.overwrite, "mask file")
            sample = store.get(sample_id)
            batch = np.stack([sample.image.pixels])
            mask = predict_mask(ensemble_average(model(batch)))[0]
            data.write_mask(mask, path, format=args.mask_format)
    print(f"wrote {len(index)} masks to {out_dir}")
    return 0


_COMMANDS = {
    "prepare-bands": _cmd_prepare_bands,
    "stats": _cmd_stats,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "cross-validate": _cmd_cross_validate,
    "predict": _cmd_predict,
}


def run(argv: list[str]) -> int:
    """Parse argv and execute one subcommand; returns the exit code."""
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ERROR:usage:{exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"ERROR:numeric:{exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"ERROR:data:{exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
