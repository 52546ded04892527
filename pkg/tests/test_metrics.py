import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskfuse.core import SemanticMap, ValidationError, m4d_registry, make_registry
from maskfuse.metrics import (
    ConfusionMatrix,
    confusion_accumulate,
    f1_from_iou,
    iou_per_class,
    summarize,
)

REG = m4d_registry()

# Published per-class IoU rows (percent) with their printed mF1 values; the
# F1 identity must reproduce every mF1 within 0.02 percentage points.
PUBLISHED_ROWS = {
    "U-Net": ([92.21, 43.92, 31.04, 21.07, 90.74], 55.79, 66.86),
    "PSPNet": ([96.80, 44.37, 59.77, 27.61, 92.78], 64.27, 74.84),
    "UPerNet": ([96.51, 48.67, 58.17, 31.38, 93.89], 65.72, 76.37),
    "DeepLabV3+": ([97.01, 49.09, 61.79, 36.99, 93.06], 67.59, 78.22),
    "OCRNet": ([97.03, 50.07, 63.53, 32.65, 94.11], 67.48, 77.82),
    "YOLOv8-SAM": ([94.34, 41.84, 48.15, 52.48, 87.65], 64.89, 76.67),
    "SAM-OIL": ([96.05, 51.60, 55.60, 52.55, 91.81], 69.52, 80.43),
}


def two_class_example():
    """gt=[0,0,1,1], pred=[0,1,1,1] on a 2x2 grid; counted by hand."""
    gt = SemanticMap(np.array([[0, 0], [1, 1]]))
    pred = SemanticMap(np.array([[0, 1], [1, 1]]))
    return pred, gt


class TestConfusion:
    def test_identity_prediction_hits_diagonal(self):
        smap = SemanticMap(np.full((4, 4), 2))
        acc = confusion_accumulate(smap, smap, ConfusionMatrix.zeros(5))
        assert acc.cells[2, 2] == 16
        assert acc.total == 16

    def test_hand_counted_cells(self):
        pred, gt = two_class_example()
        acc = confusion_accumulate(pred, gt, ConfusionMatrix.zeros(2))
        assert acc.cells[0, 0] == 1
        assert acc.cells[0, 1] == 1
        assert acc.cells[1, 1] == 2
        assert acc.cells[1, 0] == 0

    def test_accumulation_commutes(self):
        rng = np.random.default_rng(0)
        a_pred = SemanticMap(rng.integers(0, 5, (6, 6), dtype=np.uint8))
        a_gt = SemanticMap(rng.integers(0, 5, (6, 6), dtype=np.uint8))
        b_pred = SemanticMap(rng.integers(0, 5, (3, 9), dtype=np.uint8))
        b_gt = SemanticMap(rng.integers(0, 5, (3, 9), dtype=np.uint8))
        ab = ConfusionMatrix.zeros(5)
        confusion_accumulate(a_pred, a_gt, ab)
        confusion_accumulate(b_pred, b_gt, ab)
        ba = ConfusionMatrix.zeros(5)
        confusion_accumulate(b_pred, b_gt, ba)
        confusion_accumulate(a_pred, a_gt, ba)
        assert np.array_equal(ab.cells, ba.cells)

    def test_merge_matches_joint_accumulation(self):
        pred, gt = two_class_example()
        one = confusion_accumulate(pred, gt, ConfusionMatrix.zeros(2))
        two = confusion_accumulate(pred, gt, ConfusionMatrix.zeros(2))
        merged = one.merge(two)
        assert np.array_equal(merged.cells, one.cells * 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            confusion_accumulate(
                SemanticMap.background(2, 2),
                SemanticMap.background(3, 2),
                ConfusionMatrix.zeros(2),
            )

    def test_label_outside_matrix(self):
        smap = SemanticMap(np.full((2, 2), 7))
        with pytest.raises(ValidationError):
            confusion_accumulate(smap, smap, ConfusionMatrix.zeros(5))


class TestIoU:
    def test_perfect_prediction(self):
        smap = SemanticMap(np.array([[0, 1], [2, 3]]))
        acc = confusion_accumulate(smap, smap, ConfusionMatrix.zeros(5))
        ious = iou_per_class(acc)
        assert all(ious[c] == 1.0 for c in range(4))
        assert ious[4] is None  # absent from both: excluded

    def test_hand_counted_ious(self):
        pred, gt = two_class_example()
        acc = confusion_accumulate(pred, gt, ConfusionMatrix.zeros(2))
        ious = iou_per_class(acc)
        assert ious[0] == pytest.approx(1 / 2)
        assert ious[1] == pytest.approx(2 / 3)

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            h, w = int(rng.integers(1, 17)), int(rng.integers(1, 17))
            gt_arr = rng.integers(0, 5, (h, w), dtype=np.uint8)
            pred_arr = rng.integers(0, 5, (h, w), dtype=np.uint8)
            acc = confusion_accumulate(
                SemanticMap(pred_arr), SemanticMap(gt_arr), ConfusionMatrix.zeros(5)
            )
            ious = iou_per_class(acc)
            for c in range(5):
                inter = int(((gt_arr == c) & (pred_arr == c)).sum())
                union = int(((gt_arr == c) | (pred_arr == c)).sum())
                if union == 0:
                    assert ious[c] is None
                else:
                    assert ious[c] == pytest.approx(inter / union, abs=1e-12)


class TestF1Identity:
    def test_fixed_points(self):
        assert f1_from_iou(0.0) == 0.0
        assert f1_from_iou(1.0) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 1, allow_nan=False), st.floats(0, 1, allow_nan=False))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert f1_from_iou(lo) <= f1_from_iou(hi)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            f1_from_iou(1.5)

    @pytest.mark.parametrize("name", sorted(PUBLISHED_ROWS))
    def test_published_rows(self, name):
        ious, printed_miou, printed_mf1 = PUBLISHED_ROWS[name]
        mf1 = np.mean([f1_from_iou(i / 100) for i in ious]) * 100
        miou = np.mean(ious)
        assert abs(mf1 - printed_mf1) <= 0.02
        assert abs(miou - printed_miou) <= 0.02


class TestSummarize:
    def test_identity_gives_ones(self):
        smap = SemanticMap(np.array([[0, 1, 2], [3, 4, 0]]))
        acc = confusion_accumulate(smap, smap, ConfusionMatrix.zeros(5))
        report = summarize(acc, REG)
        assert report.miou == 1.0
        assert report.mf1 == 1.0
        assert report.evaluated_classes == (0, 1, 2, 3, 4)
        assert report.excluded_classes == ()

    def test_hand_example_means(self):
        pred, gt = two_class_example()
        reg = make_registry(["bg", "fg"], "bg")
        acc = confusion_accumulate(pred, gt, ConfusionMatrix.zeros(2))
        report = summarize(acc, reg)
        assert report.miou == pytest.approx(7 / 12)

    def test_mf1_is_mean_of_f1_identity(self):
        rng = np.random.default_rng(4)
        pred = SemanticMap(rng.integers(0, 5, (12, 12), dtype=np.uint8))
        gt = SemanticMap(rng.integers(0, 5, (12, 12), dtype=np.uint8))
        acc = confusion_accumulate(pred, gt, ConfusionMatrix.zeros(5))
        report = summarize(acc, REG)
        expected = np.mean(
            [f1_from_iou(report.per_class_iou[c]) for c in report.evaluated_classes]
        )
        assert report.mf1 == pytest.approx(expected, abs=1e-15)

    def test_excluded_class_flagged(self):
        pred = SemanticMap(np.array([[0, 1]]))
        gt = SemanticMap(np.array([[0, 1]]))
        report = summarize(
            confusion_accumulate(pred, gt, ConfusionMatrix.zeros(5)), REG
        )
        assert set(report.excluded_classes) == {2, 3, 4}
        assert report.miou == 1.0  # only defined classes enter the mean

    def test_empty_matrix_is_an_error(self):
        with pytest.raises(ValidationError, match="no data"):
            summarize(ConfusionMatrix.zeros(5), REG)

    def test_registry_size_checked(self):
        with pytest.raises(ValidationError):
            summarize(ConfusionMatrix.zeros(3), REG)

    def test_bounds(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            pred = SemanticMap(rng.integers(0, 5, (8, 8), dtype=np.uint8))
            gt = SemanticMap(rng.integers(0, 5, (8, 8), dtype=np.uint8))
            report = summarize(
                confusion_accumulate(pred, gt, ConfusionMatrix.zeros(5)), REG
            )
            defined = [report.per_class_iou[c] for c in report.evaluated_classes]
            assert 0.0 <= report.miou <= 1.0
            assert report.miou <= max(defined)
            assert all(0.0 <= v <= 1.0 for v in defined)
