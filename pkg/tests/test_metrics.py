import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from terrace.errors import ShapeError
from terrace.metrics import aggregate, instance_f1, pairwise_iou, pixel_iou


def test_pixel_iou_cases():
    a = np.zeros((4, 4), dtype=bool)
    a[0:2, 0:2] = True
    assert pixel_iou(a, a) == 1.0
    b = np.zeros_like(a)
    b[2:4, 2:4] = True
    assert pixel_iou(a, b) == 0.0
    c = np.zeros_like(a)
    c[0:2, 1:3] = True
    assert pixel_iou(a, c) == pytest.approx(1 / 3)
    assert pixel_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ShapeError):
        pixel_iou(a, np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pixel_iou_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 6, 6)) < 0.4
    assert pixel_iou(a, b) == pixel_iou(b, a)


def test_f1_cases():
    gt = np.zeros((8, 8), dtype=int)
    gt[0:2, 0:2] = 1
    gt[4:6, 0:3] = 2
    gt[5:8, 5:8] = 3
    assert instance_f1(gt, gt).f1 == 1.0
    r = instance_f1(np.zeros_like(gt), gt)
    assert r.f1 == 0.0 and r.false_negatives == 3
    assert instance_f1(np.zeros_like(gt), np.zeros_like(gt)).f1 == 1.0


def test_half_covered_square_matches():
    gt = np.zeros((6, 6), dtype=int)
    gt[1:5, 1:5] = 1
    pred = np.zeros_like(gt)
    pred[1:5, 1:3] = 7
    r = instance_f1(pred, gt)
    assert r.matches[0][2] == 0.5
    assert (r.true_positives, r.false_positives, r.false_negatives) == (1, 0, 0)
    assert r.f1 == 1.0


def optimal_tp(pred, gt, thr):
    gt_ids, pred_ids, ious = pairwise_iou(pred, gt)
    best = 0
    small, large = (gt_ids, pred_ids) if len(gt_ids) <= len(pred_ids) else (pred_ids, gt_ids)
    swap = len(gt_ids) > len(pred_ids)
    for perm in itertools.permutations(large + [None] * len(small), len(small)):
        tp = 0
        for s, l in zip(small, perm):
            if l is None:
                continue
            key = (l, s) if swap else (s, l)
            if ious.get(key, 0.0) >= thr:
                tp += 1
        best = max(best, tp)
    return best


def _random_map(rng, n, size=12):
    m = np.zeros((size, size), dtype=int)
    for k in range(1, n + 1):
        y, x = rng.integers(0, size - 2, size=2)
        m[y : y + rng.integers(2, 6), x : x + rng.integers(2, 6)] = k
    return m


def test_greedy_equals_optimal_on_small_scenes():
    for seed in range(200):
        rng = np.random.default_rng(seed)
        gt = _random_map(rng, int(rng.integers(0, 4)))
        pred = _random_map(rng, int(rng.integers(0, 4)))
        r = instance_f1(pred, gt)
        assert r.true_positives == optimal_tp(pred, gt, 0.5), seed
        n_pred = len([v for v in np.unique(pred) if v > 0])
        n_gt = len([v for v in np.unique(gt) if v > 0])
        assert r.true_positives + r.false_positives == n_pred
        assert r.true_positives + r.false_negatives == n_gt


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_self_match_is_perfect(seed):
    m = _random_map(np.random.default_rng(seed), 5)
    assert instance_f1(m, m).f1 == 1.0


def test_aggregate_sums_counts():
    gt = np.zeros((4, 4), dtype=int)
    gt[0:2, 0:2] = 1
    agg = aggregate([instance_f1(gt, gt), instance_f1(np.zeros_like(gt), gt)])
    assert agg == {"TP": 1, "FP": 0, "FN": 1, "F1": pytest.approx(2 / 3)}
