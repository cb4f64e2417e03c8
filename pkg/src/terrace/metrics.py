"""Pixel IoU and instance-level F1 with greedy IoU matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def pixel_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


@dataclass
class InstanceMatchResult:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    matches: list[tuple[int, int, float]] = field(default_factory=list)  # (gt id, pred id, iou)

    @property
    def f1(self) -> float:
        return f1_score(self.true_positives, self.false_positives, self.false_negatives)

    def as_dict(self) -> dict:
        return {
            "TP": self.true_positives,
            "FP": self.false_positives,
            "FN": self.false_negatives,
            "F1": self.f1,
        }


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def pairwise_iou(pred: np.ndarray, gt: np.ndarray):
    """IoU between every overlapping (gt id, pred id) pair.

    Returns ``(gt_ids, pred_ids, {(g, p): iou})``; pairs that do not
    overlap are absent and have IoU 0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} and gt {gt.shape} differ")
    gt_ids = [int(v) for v in np.unique(gt) if v > 0]
    pred_ids = [int(v) for v in np.unique(pred) if v > 0]
    gt_area = dict(zip(*np.unique(gt[gt > 0], return_counts=True)))
    pred_area = dict(zip(*np.unique(pred[pred > 0], return_counts=True)))
    both = (gt > 0) & (pred > 0)
    pairs, counts = np.unique(np.stack([gt[both], pred[both]]), axis=1, return_counts=True)
    ious = {}
    for (g, p), inter in zip(pairs.T.tolist(), counts.tolist()):
        ious[(g, p)] = inter / (gt_area[g] + pred_area[p] - inter)
    return gt_ids, pred_ids, ious


def instance_f1(pred: np.ndarray, gt: np.ndarray, iou_threshold: float = 0.5) -> InstanceMatchResult:
    gt_ids, pred_ids, ious = pairwise_iou(pred, gt)
    candidates = sorted(
        ((iou, g, p) for (g, p), iou in ious.items() if iou >= iou_threshold),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_g, used_p = set(), set()
    matches = []
    for iou, g, p in candidates:
        if g in used_g or p in used_p:
            continue
        used_g.add(g)
        used_p.add(p)
        matches.append((g, p, iou))
    tp = len(matches)
    return InstanceMatchResult(tp, len(pred_ids) - tp, len(gt_ids) - tp, matches)


def aggregate(results: list[InstanceMatchResult]) -> dict:
    tp = sum(r.true_positives for r in results)
    fp = sum(r.false_positives for r in results)
    fn = sum(r.false_negatives for r in results)
    return {"TP": tp, "FP": fp, "FN": fn, "F1": f1_score(tp, fp, fn)}
