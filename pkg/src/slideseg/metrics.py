"""Pixel-wise confusion counts and the F1 / mIoU evaluation metrics.

Landslide is the positive class. Counts are accumulated over a whole
evaluation set by summation (micro-averaging); a class absent from both
prediction and ground truth contributes IoU 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch

REPORT_COLUMNS = ("split", "fold", "f1", "miou", "iou_bg", "iou_ls", "tp", "fp", "fn", "tn", "params")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def f1_score(c: ConfusionCounts) -> float:
    """Pixel F1 in percent; 0 when the denominator vanishes."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 0.0
    return 100.0 * 2 * c.tp / denom


def per_class_iou(c: ConfusionCounts) -> tuple[float, float]:
    """(background IoU, landslide IoU) in percent; empty classes score 100."""
    ls_denom = c.tp + c.fp + c.fn
    bg_denom = c.tn + c.fp + c.fn
    iou_ls = 100.0 if ls_denom == 0 else 100.0 * c.tp / ls_denom
    iou_bg = 100.0 if bg_denom == 0 else 100.0 * c.tn / bg_denom
    return iou_bg, iou_ls


def miou(c: ConfusionCounts) -> float:
    iou_bg, iou_ls = per_class_iou(c)
    return (iou_bg + iou_ls) / 2.0


@dataclass
class EvalReport:
    counts: ConfusionCounts
    f1: float
    miou: float
    per_class_iou: tuple[float, float]
    param_count: int = 0
    split: str = ""
    fold: str = ""
    f1_macro: float | None = None
    miou_macro: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.f1 <= 100.0 and 0.0 <= self.miou <= 100.0):
            raise ValueError("f1 and miou must be in [0, 100]")


def make_report(
    counts: ConfusionCounts,
    param_count: int = 0,
    split: str = "",
    fold: str = "",
    f1_macro: float | None = None,
    miou_macro: float | None = None,
) -> EvalReport:
    return EvalReport(
        counts=counts,
        f1=f1_score(counts),
        miou=miou(counts),
        per_class_iou=per_class_iou(counts),
        param_count=param_count,
        split=split,
        fold=fold,
        f1_macro=f1_macro,
        miou_macro=miou_macro,
    )


def report_row(report: EvalReport) -> list[str]:
    iou_bg, iou_ls = report.per_class_iou
    c = report.counts
    return [
        report.split,
        str(report.fold),
        f"{report.f1:.4f}",
        f"{report.miou:.4f}",
        f"{iou_bg:.4f}",
        f"{iou_ls:.4f}",
        str(c.tp),
        str(c.fp),
        str(c.fn),
        str(c.tn),
        str(report.param_count),
    ]


def write_report_csv(reports, path) -> None:
    if isinstance(reports, EvalReport):
        reports = [reports]
    path = Path(path)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            writer.writerow(report_row(report))


def format_report_text(report: EvalReport) -> str:
    lines = [f"F1: {report.f1:.2f}", f"mIoU: {report.miou:.2f}"]
    iou_bg, iou_ls = report.per_class_iou
    lines.append(f"IoU (background): {iou_bg:.2f}")
    lines.append(f"IoU (landslide): {iou_ls:.2f}")
    c = report.counts
    lines.append(f"Counts: tp={c.tp} fp={c.fp} fn={c.fn} tn={c.tn}")
    if report.param_count:
        lines.append(f"Parameters: {report.param_count}")
    if report.f1_macro is not None:
        lines.append(f"F1 (per-image macro): {report.f1_macro:.2f}")
    if report.miou_macro is not None:
        lines.append(f"mIoU (per-image macro): {report.miou_macro:.2f}")
    return "\n".join(lines)
