import numpy as np
import pytest

from slideseg.errors import ShapeMismatch
from slideseg.metrics import (
    ConfusionCounts,
    EvalReport,
    REPORT_COLUMNS,
    confusion_counts,
    f1_score,
    format_report_text,
    make_report,
    miou,
    per_class_iou,
    report_row,
    write_report_csv,
)

import reference


def test_confusion_identity_case():
    gt = np.zeros((4, 4), np.uint8)
    gt.reshape(-1)[:5] = 1
    c = confusion_counts(gt, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == (5, 0, 0, 11)


def test_confusion_all_wrong():
    pred = np.ones((4, 4), np.uint8)
    gt = np.zeros((4, 4), np.uint8)
    c = confusion_counts(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == (0, 16, 0, 0)


def test_confusion_enumeration():
    pred = np.array([1, 1, 0, 0])
    gt = np.array([1, 0, 1, 0])
    c = confusion_counts(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == (1, 1, 1, 1)


def test_confusion_matches_naive_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pred = rng.integers(0, 2, size=(8, 8))
        gt = rng.integers(0, 2, size=(8, 8))
        c = confusion_counts(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == reference.naive_confusion(pred, gt)


def test_confusion_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        confusion_counts(np.zeros((4, 4)), np.zeros((4, 5)))


def test_f1_examples():
    assert f1_score(ConfusionCounts(tp=5)) == 100.0
    assert f1_score(ConfusionCounts(tp=2, fp=1, fn=1)) == pytest.approx(200.0 / 3.0)
    assert f1_score(ConfusionCounts(tn=16)) == 0.0


def test_miou_examples():
    assert miou(ConfusionCounts(tp=5, tn=11)) == 100.0
    assert miou(ConfusionCounts(tp=1, fp=1, fn=1, tn=1)) == pytest.approx(100.0 / 3.0)
    # all-background prediction on an all-background image: landslide IoU
    # defaults to 1 by convention
    assert miou(ConfusionCounts(tn=16)) == 100.0


def test_per_class_iou_values():
    iou_bg, iou_ls = per_class_iou(ConfusionCounts(tp=2, fp=1, fn=1, tn=12))
    assert iou_ls == pytest.approx(50.0)
    assert iou_bg == pytest.approx(100.0 * 12 / 14)


def test_metrics_invariant_under_spatial_permutation():
    rng = np.random.default_rng(1)
    pred = rng.integers(0, 2, size=64)
    gt = rng.integers(0, 2, size=64)
    base = confusion_counts(pred, gt)
    for _ in range(20):
        perm = rng.permutation(64)
        c = confusion_counts(pred[perm], gt[perm])
        assert f1_score(c) == f1_score(base)
        assert miou(c) == miou(base)


def test_miou_invariant_under_class_swap():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pred = rng.integers(0, 2, size=(8, 8))
        gt = rng.integers(0, 2, size=(8, 8))
        a = confusion_counts(pred, gt)
        b = confusion_counts(1 - pred, 1 - gt)
        assert miou(a) == pytest.approx(miou(b))
        assert (a.tp, a.fp, a.fn, a.tn) == (b.tn, b.fn, b.fp, b.tp)


def test_accumulation_soundness():
    rng = np.random.default_rng(3)
    preds = [rng.integers(0, 2, size=(8, 8)) for _ in range(10)]
    gts = [rng.integers(0, 2, size=(8, 8)) for _ in range(10)]
    total = ConfusionCounts()
    for p, g in zip(preds, gts):
        total = total + confusion_counts(p, g)
    flat = confusion_counts(np.concatenate([p.ravel() for p in preds]), np.concatenate([g.ravel() for g in gts]))
    assert (total.tp, total.fp, total.fn, total.tn) == (flat.tp, flat.fp, flat.fn, flat.tn)
    assert f1_score(total) == f1_score(flat)
    assert miou(total) == miou(flat)


def test_report_csv_schema(tmp_path):
    report = make_report(ConfusionCounts(tp=3, fp=1, fn=2, tn=10), param_count=1234, split="test")
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines[1].split(",")) == 11
    assert len(report_row(report)) == 11


def test_report_text_formatting():
    report = EvalReport(
        counts=ConfusionCounts(tp=1, fp=1, fn=1, tn=1),
        f1=84.0712,
        miou=76.0749,
        per_class_iou=(90.0, 62.1),
    )
    text = format_report_text(report)
    assert "F1: 84.07" in text.splitlines()
    assert "mIoU: 76.07" in text.splitlines()


def test_report_text_zero_counts():
    report = make_report(ConfusionCounts(tp=0, fp=5, fn=5, tn=6))
    assert "F1: 0.00" in format_report_text(report).splitlines()
