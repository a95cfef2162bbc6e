import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_average_precision, brute_confusion, brute_iou, brute_kappa, brute_topk
from wcdnet.metrics import (
    ConfusionCounts,
    MetricsReport,
    accuracy,
    average_precision,
    confusion,
    iou,
    kappa_dice_totalacc,
    miou,
    read_report_json,
    semantic_average_precision,
    topk_accuracy,
    write_report_csv,
    write_report_json,
)

# float results of the brute-force oracles take different arithmetic paths
FLOAT_TOL = 1e-12


def test_confusion_examples():
    gt = np.array([1] * 10 + [0] * 6)
    assert confusion(gt, gt) == ConfusionCounts(10, 6, 0, 0)
    c = confusion(1 - gt, gt)
    assert c.tp == 0 and c.tn == 0
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionCounts(1, 1, 1, 1)


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError):
        confusion([0, 2], [0, 1])
    with pytest.raises(ValueError):
        confusion([0, 1], [0, 1, 1])


def test_iou_examples():
    assert iou(ConfusionCounts(5, 5, 0, 0)) == 1.0
    assert iou(ConfusionCounts(3, 0, 1, 2)) == 0.5
    assert iou(ConfusionCounts(0, 9, 0, 0)) == 1.0
    assert miou(ConfusionCounts(0, 9, 0, 0)) == 1.0


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.3], [1]) == 1.0
    with pytest.raises(ValueError, match="positive"):
        average_precision([0.3, 0.2], [0, 0])


def test_kappa_examples():
    kappa, dice, acc = kappa_dice_totalacc(ConfusionCounts(40, 40, 10, 10))
    assert (acc, dice) == (0.8, 0.8)
    assert kappa == pytest.approx(0.6, abs=1e-15)
    assert kappa_dice_totalacc(ConfusionCounts(5, 5, 0, 0)) == (1.0, 1.0, 1.0)
    assert kappa_dice_totalacc(ConfusionCounts(0, 50, 0, 50)) == (0.0, 0.0, 0.5)


def test_kappa_degenerate_conventions():
    # everything negative in both: p_e = 1 and p_o = 1
    assert kappa_dice_totalacc(ConfusionCounts(0, 10, 0, 0)) == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        kappa_dice_totalacc(ConfusionCounts(0, 0, 0, 0))


def test_topk_examples():
    probs = np.array([[0.5, 0.1, 0.1, 0.1, 0.1, 0.1]] * 3, dtype=float)
    probs[0] = [0.9, 0.05, 0.02, 0.01, 0.01, 0.01]
    probs[1] = [0.3, 0.25, 0.2, 0.1, 0.1, 0.05]
    probs[2] = [0.3, 0.25, 0.2, 0.1, 0.1, 0.05]
    gt = [0, 2, 5]  # ranked 1st, 3rd, 6th
    assert topk_accuracy(probs, gt, 5) == pytest.approx(2 / 3)
    assert topk_accuracy(probs, gt, 6) == 1.0
    assert topk_accuracy(probs, [0, 0, 0], 1) == 1.0
    with pytest.raises(ValueError):
        topk_accuracy(probs, gt, 7)


def test_topk_ties_go_to_lower_index():
    probs = np.full((1, 4), 0.25)
    assert topk_accuracy(probs, [1], 1) == 0.0
    assert topk_accuracy(probs, [0], 1) == 1.0
    assert topk_accuracy(probs, [1], 2) == 1.0


def test_accuracy_and_semantic_ap():
    assert accuracy([0, 1, 2], [0, 1, 1]) == pytest.approx(2 / 3)
    probs = np.eye(3)[[0, 1, 2, 2]]
    assert semantic_average_precision(probs, [0, 1, 2, 2]) == 1.0


def test_oracle_equivalence_500_cases():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(1, 40))
        pred = rng.random(n) < rng.random()
        gt = rng.random(n) < rng.random()
        counts = confusion(pred, gt)
        tp, tn, fp, fn = brute_confusion(pred, gt)
        assert (counts.tp, counts.tn, counts.fp, counts.fn) == (tp, tn, fp, fn)
        assert iou(counts) == brute_iou(tp, fp, fn)
        assert miou(counts) == (brute_iou(tp, fp, fn) + brute_iou(tn, fn, fp)) / 2

        kappa, dice, acc = kappa_dice_totalacc(counts)
        p_o, p_e = brute_kappa(tp, tn, fp, fn)
        assert acc == pytest.approx(p_o, abs=FLOAT_TOL)
        if math.isclose(p_e, 1.0, abs_tol=1e-15):
            assert kappa == (1.0 if p_o == 1 else 0.0)
        else:
            assert kappa == pytest.approx((p_o - p_e) / (1 - p_e), abs=FLOAT_TOL)
        assert dice == (1.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))

        # few distinct score values so that ties are common
        scores = rng.integers(0, 6, n) / 5
        labels = rng.random(n) < 0.5
        if labels.any():
            assert average_precision(scores, labels) == pytest.approx(
                brute_average_precision(scores, labels), abs=FLOAT_TOL
            )

        classes = int(rng.integers(2, 8))
        probs = rng.integers(0, 4, (n, classes)).astype(float)
        gt_lab = rng.integers(0, classes, n)
        k = int(rng.integers(1, classes + 1))
        assert topk_accuracy(probs, gt_lab, k) == brute_topk(probs, gt_lab, k)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_ap_invariant_under_monotone_transform(seed, a, b):
    rng = np.random.default_rng(seed)
    scores = rng.random(20)
    labels = rng.random(20) < 0.5
    labels[0] = True
    transformed = np.exp(a * scores) + b
    assert average_precision(transformed, labels) == pytest.approx(average_precision(scores, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 50))
    counts = confusion(rng.random(n) < 0.5, rng.random(n) < 0.5)
    kappa, dice, acc = kappa_dice_totalacc(counts)
    assert -1 <= kappa <= 1 and 0 <= dice <= 1 and 0 <= acc <= 1
    assert 0 <= miou(counts) <= 1


def test_report_json_csv_round_trip(tmp_path):
    rep = MetricsReport(miou=0.5, miou_change_class=0.25, ap=None, accuracy=1.0, top1=0.9, top5=1.0, num_pairs=3)
    write_report_json(rep, tmp_path / "m.json")
    assert read_report_json(tmp_path / "m.json") == rep
    assert json.loads((tmp_path / "m.json").read_text())["ap"] is None
    write_report_csv({"a": rep, "b": rep}, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("name,miou,miou_change_class")
    assert len(lines) == 3


def test_report_validate():
    with pytest.raises(ValueError):
        MetricsReport(miou=1.5).validate()
    MetricsReport(kappa=-0.5).validate()
