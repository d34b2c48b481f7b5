"""Experiment orchestration: splits, folds, training loops, evaluation.

A run directory collects everything needed to reproduce an experiment:

    runs/<name>/config.yaml    the exact TrainConfig used
    runs/<name>/history.csv    per-epoch train loss and validation F1/mIoU
    runs/<name>/best.ckpt      weights of the best validation-F1 epoch
    runs/<name>/report.csv     final evaluation report

All randomness derives from TrainConfig.seed (model init, shuffling,
validation carve) and AugmentConfig.rng_seed (augmentation draws), so a
run is reproducible bit-for-bit on a fixed device class.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import yaml

from . import bands, data
from .augment import AugmentConfig, augment_batch
from .data import DatasetIndex, Sample
from .errors import EmptyDataset, InvalidConfig, NonFiniteLoss, TooFewSamples
from .losses import LossConfig, multi_head_loss
from .metrics import (
    ConfusionCounts,
    EvalReport,
    confusion_counts,
    f1_score,
    make_report,
    miou,
    write_report_csv,
)
from .model import (
    ModelConfig,
    UNet,
    build_model,
    count_parameters,
    ensemble_average,
    load_checkpoint,
    predict_mask,
    save_checkpoint,
)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_f1", "val_miou")


@dataclass
class TrainConfig:
    epochs: int = 65
    batch_size: int = 16
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    seed: int = 42
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    band_selection: str = "none"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.optimizer != "adam":
            raise InvalidConfig(f"unsupported optimizer '{self.optimizer}'")
        bands.preset(self.band_selection)

    def selection(self) -> bands.BandSelection:
        return bands.preset(self.band_selection)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"]["combined_weights"] = list(self.loss.combined_weights)
        out["model"]["encoder_channels"] = list(self.model.encoder_channels)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        try:
            loss = LossConfig(**raw.pop("loss", {}))
            augment = AugmentConfig(**raw.pop("augment", {}))
            model = ModelConfig(**raw.pop("model", {}))
            return cls(loss=loss, augment=augment, model=model, **raw)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad training config: {exc}") from exc


def save_train_config(cfg: TrainConfig, path) -> None:
    with Path(path).open("w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


def load_train_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfig(f"config file '{path}' does not exist")
    with path.open() as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise InvalidConfig(f"config file '{path}' is not a mapping")
    return TrainConfig.from_dict(raw)


# -- splits and folds ----------------------------------------------------------

def split_dataset(index: DatasetIndex, train_fraction: float = 0.8, seed: int = 42):
    """Deterministic disjoint train/test split; train gets floor(fraction*N)."""
    n = len(index)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(math.floor(train_fraction * n))
    ids = index.sample_ids
    train = tuple(ids[i] for i in sorted(order[:n_train]))
    test = tuple(ids[i] for i in sorted(order[n_train:]))
    return train, test


@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int]

    def __post_init__(self):
        sizes = self.fold_sizes()
        if max(sizes) - min(sizes) > 1:
            raise ValueError(f"fold sizes differ by more than 1: {sizes}")

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for fold in self.assignments.values():
            sizes[fold] += 1
        return sizes

    def fold_ids(self, fold: int) -> tuple[str, ...]:
        return tuple(i for i, f in self.assignments.items() if f == fold)

    def complement_ids(self, fold: int) -> tuple[str, ...]:
        return tuple(i for i, f in self.assignments.items() if f != fold)


def make_folds(index: DatasetIndex, k: int = 5, seed: int = 42, stratify: bool = False) -> FoldPlan:
    """Balanced k-way partition, deterministic given the seed.

    stratify=True balances landslide-containing images across folds.
    """
    n = len(index)
    if n < k:
        raise TooFewSamples(f"need at least {k} samples for {k} folds, got {n}")
    rng = np.random.default_rng(seed)
    if stratify:
        landslide = set(index.landslide_ids)
        with_ls = [i for i in index.sample_ids if i in landslide]
        without = [i for i in index.sample_ids if i not in landslide]
        order = [with_ls[i] for i in rng.permutation(len(with_ls))]
        order += [without[i] for i in rng.permutation(len(without))]
    else:
        order = [index.sample_ids[i] for i in rng.permutation(n)]
    assignments = {sample_id: pos % k for pos, sample_id in enumerate(order)}
    return FoldPlan(k=k, assignments=assignments)


# -- data access ---------------------------------------------------------------

class SampleStore:
    """Engineered samples by id, with an in-memory cache.

    Prefers the on-disk engineered cache; falls back to computing the
    selected bands from the original 14-band files.
    """

    def __init__(self, index: DatasetIndex, selection: bands.BandSelection):
        self.index = index
        self.selection = bands.validate_selection(selection)
        self._cache: dict[str, Sample] = {}

    def get(self, sample_id: str) -> Sample:
        cached = self._cache.get(sample_id)
        if cached is not None:
            return cached
        stack = None
        if self.selection:
            stack = bands.read_engineered(self.index.root_path, self.selection, sample_id)
        if stack is None:
            sample14 = data.read_sample(self.index, sample_id)
            stack = bands.engineer_stack(sample14.image, self.selection)
            mask = sample14.mask
        else:
            mask = data.read_gt_mask(self.index, sample_id)
        sample = Sample(image=stack, mask=mask)
        self._cache[sample_id] = sample
        return sample


def build_band_cache(index: DatasetIndex, selection: bands.BandSelection, overwrite: bool = False) -> Path:
    """Engineer every sample once and persist the stacks under the root."""
    selection = bands.validate_selection(selection)
    for sample_id in index.sample_ids:
        sample = data.read_sample(index, sample_id)
        stack = bands.engineer_stack(sample.image, selection)
        bands.write_engineered(stack, index.root_path, selection, overwrite=overwrite)
    return bands.engineered_dir(index.root_path, selection)


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: UNet
    history: list[dict]
    checkpoint_path: Path | None
    best_epoch: int
    best_val_f1: float
    train_ids: tuple[str, ...] = ()
    val_ids: tuple[str, ...] = ()


def make_optimizer(cfg: TrainConfig, model: torch.nn.Module) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


def _batch_tensors(samples: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.image.pixels for s in samples]))
    y = torch.from_numpy(np.stack([s.mask.labels for s in samples]).astype(np.int64))
    return x, y


def _model_scores(model: UNet, store: SampleStore, ids, batch_size: int) -> tuple[float, float]:
    counts = ConfusionCounts()
    model.eval()
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = [store.get(i) for i in ids[start : start + batch_size]]
            x, _ = _batch_tensors(chunk)
            probs = ensemble_average(model(x))
            pred = predict_mask(probs)
            gt = np.stack([s.mask.labels for s in chunk])
            counts = counts + confusion_counts(pred, gt)
    return f1_score(counts), miou(counts)


def write_history_csv(history: list[dict], path) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow(
                [row["epoch"], f"{row['train_loss']:.6f}", f"{row['val_f1']:.4f}", f"{row['val_miou']:.4f}"]
            )


def train(
    cfg: TrainConfig,
    index: DatasetIndex,
    train_ids,
    val_ids=None,
    run_dir=None,
) -> TrainResult:
    """Train per the config and keep the best validation-F1 weights.

    When val_ids is omitted, 10% of the training ids are carved off
    deterministically (and removed from the effective training set).
    Raises NonFiniteLoss if the loss stops being finite; in that case
    the last finite weights are persisted when a run directory is set.
    """
    selection = cfg.selection()
    expected_channels = data.ORIGINAL_BAND_COUNT + len(selection)
    if cfg.model.input_channels != expected_channels:
        raise InvalidConfig(
            f"model.input_channels={cfg.model.input_channels} but band selection "
            f"'{cfg.band_selection}' yields {expected_channels} channels"
        )

    train_ids = list(train_ids)
    if not train_ids:
        raise EmptyDataset("no training ids")
    if val_ids is None:
        carve_rng = np.random.default_rng(cfg.seed)
        order = carve_rng.permutation(len(train_ids))
        n_val = max(1, len(train_ids) // 10)
        val_set = {train_ids[i] for i in order[:n_val]}
        val_ids = sorted(val_set)
        train_ids = [i for i in train_ids if i not in val_set]
        if not train_ids:
            raise TooFewSamples("validation carve consumed every training id")
    else:
        val_ids = list(val_ids)

    store = SampleStore(index, selection)
    landslide = set(index.landslide_ids)
    donor_ids = [i for i in train_ids if i in landslide and i not in set(val_ids)]

    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model)
    optimizer = make_optimizer(cfg, model)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    aug_rng = np.random.default_rng(cfg.augment.rng_seed)

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_train_config(cfg, run_dir / "config.yaml")

    needs_donors = cfg.augment.cutmix_enabled and cfg.augment.max_donors > 0
    donor_pool = [store.get(i) for i in donor_ids] if needs_donors else []

    history: list[dict] = []
    best_state = None
    best_f1 = -1.0
    best_epoch = -1
    last_finite_state = copy.deepcopy(model.state_dict())

    for epoch in range(cfg.epochs):
        model.train()
        order = shuffle_rng.permutation(len(train_ids))
        epoch_ids = [train_ids[i] for i in order]
        losses = []
        for start in range(0, len(epoch_ids), cfg.batch_size):
            batch = [store.get(i) for i in epoch_ids[start : start + cfg.batch_size]]
            if cfg.augment.rotation_enabled or cfg.augment.cutmix_enabled:
                batch = augment_batch(batch, donor_pool, cfg.augment, rng=aug_rng)
            x, y = _batch_tensors(batch)
            heads = model(x)
            loss = multi_head_loss(heads, y, cfg.loss)
            if not torch.isfinite(loss):
                if run_dir is not None:
                    rollback = build_model(cfg.model)
                    rollback.load_state_dict(last_finite_state)
                    save_checkpoint(
                        rollback,
                        run_dir / "best.ckpt",
                        meta={"band_selection": cfg.band_selection, "epoch": epoch, "finite": False},
                    )
                raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
            last_finite_state = copy.deepcopy(model.state_dict())

        val_f1, val_miou = _model_scores(model, store, val_ids, cfg.batch_size)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)) if losses else float("nan"),
                "val_f1": val_f1,
                "val_miou": val_miou,
            }
        )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    model.eval()

    checkpoint_path = None
    if run_dir is not None:
        checkpoint_path = run_dir / "best.ckpt"
        save_checkpoint(
            model,
            checkpoint_path,
            meta={"band_selection": cfg.band_selection, "epoch": best_epoch, "val_f1": best_f1},
        )
        write_history_csv(history, run_dir / "history.csv")
        report = evaluate(model, index, val_ids, band_selection=cfg.band_selection, split="val")
        write_report_csv(report, run_dir / "report.csv")

    return TrainResult(
        model=model,
        history=history,
        checkpoint_path=checkpoint_path,
        best_epoch=best_epoch,
        best_val_f1=best_f1,
        train_ids=tuple(train_ids),
        val_ids=tuple(val_ids),
    )


# -- evaluation ----------------------------------------------------------------

def evaluate(
    checkpoint,
    index: DatasetIndex,
    ids,
    band_selection: str | None = None,
    batch_size: int = 16,
    split: str = "",
    fold: str = "",
) -> EvalReport:
    """Accumulate confusion counts over ids with the head-ensemble prediction.

    checkpoint may be a path (band selection read from its metadata) or
    an in-memory model. Micro-averaged metrics fill the report; the
    per-image macro averages ride along.
    """
    if isinstance(checkpoint, UNet):
        model = checkpoint
        if band_selection is None:
            raise InvalidConfig("band_selection is required when evaluating an in-memory model")
    else:
        model, meta = load_checkpoint(checkpoint)
        if band_selection is None:
            band_selection = meta.get("band_selection", "none")

    ids = list(ids)
    if not ids:
        raise EmptyDataset("no ids to evaluate")
    store = SampleStore(index, bands.preset(band_selection))

    counts = ConfusionCounts()
    per_image_f1 = []
    per_image_miou = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = [store.get(i) for i in ids[start : start + batch_size]]
            x, _ = _batch_tensors(chunk)
            pred = predict_mask(ensemble_average(model(x)))
            for sample, mask in zip(chunk, pred):
                c = confusion_counts(mask, sample.mask.labels)
                counts = counts + c
                per_image_f1.append(f1_score(c))
                per_image_miou.append(miou(c))

    return make_report(
        counts,
        param_count=count_parameters(model),
        split=split,
        fold=fold,
        f1_macro=float(np.mean(per_image_f1)),
        miou_macro=float(np.mean(per_image_miou)),
    )


def cross_validate(
    cfg: TrainConfig,
    index: DatasetIndex,
    k: int = 5,
    run_dir=None,
    stratify: bool = False,
) -> tuple[EvalReport, list[EvalReport]]:
    """Train k fold-complement models and average the per-fold scores.

    Per-fold reports are written under run_dir as folds finish, so a
    failing fold leaves the earlier reports behind.
    """
    plan = make_folds(index, k=k, seed=cfg.seed, stratify=stratify)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    fold_reports: list[EvalReport] = []
    for fold in range(k):
        fold_dir = run_dir / f"fold_{fold}" if run_dir is not None else None
        result = train(cfg, index, plan.complement_ids(fold), run_dir=fold_dir)
        report = evaluate(
            result.model,
            index,
            plan.fold_ids(fold),
            band_selection=cfg.band_selection,
            batch_size=cfg.batch_size,
            split="fold",
            fold=str(fold),
        )
        fold_reports.append(report)
        if run_dir is not None:
            write_report_csv(fold_reports, run_dir / "report.csv")

    counts = ConfusionCounts()
    for report in fold_reports:
        counts = counts + report.counts
    aggregate = EvalReport(
        counts=counts,
        f1=float(np.mean([r.f1 for r in fold_reports])),
        miou=float(np.mean([r.miou for r in fold_reports])),
        per_class_iou=(
            float(np.mean([r.per_class_iou[0] for r in fold_reports])),
            float(np.mean([r.per_class_iou[1] for r in fold_reports])),
        ),
        param_count=fold_reports[0].param_count,
        split="cv-mean",
        fold="",
    )
    if run_dir is not None:
        write_report_csv([aggregate] + fold_reports, run_dir / "report.csv")
    return aggregate, fold_reports
