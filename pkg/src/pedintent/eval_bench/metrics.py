"""Intention accuracy/F1 with a pedestrian-height filter, and detection mAP."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from pedintent.errors import UndefinedMetricsError
from pedintent.grid_codec import Detection, box_iou
from pedintent.scenario_gen import CROSS, AgentClass, AgentState

RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass
class IntentMetrics:
    accuracy: float
    f1: float
    confusion: dict[str, int]
    n_scored: int
    n_unmatched: int
    height_filter_px: float

    def to_dict(self) -> dict:
        return asdict(self)


def match_assignments(assignments, gt_peds: list[AgentState], iou_threshold: float = 0.5):
    """Pair ground-truth pedestrians with assignments, greedy by detection score.

    Returns ``[(gt, assignment_or_None), ...]`` in ground-truth order.
    """
    order = sorted(range(len(assignments)), key=lambda n: -assignments[n].detection.score)
    taken: dict[int, object] = {}
    for n in order:
        a = assignments[n]
        best, best_iou = None, iou_threshold
        for g_idx, g in enumerate(gt_peds):
            if g_idx in taken:
                continue
            iou = box_iou(a.detection.box, g.box)
            if iou >= best_iou:
                best, best_iou = g_idx, iou
        if best is not None:
            taken[best] = a
    return [(g, taken.get(n)) for n, g in enumerate(gt_peds)]


def intent_metrics(frames: Iterable[tuple[Sequence, list[AgentState]]], height_filter_px: float = 0.0) -> IntentMetrics:
    """Score intention over frames given as ``(assignments, ground_truth)``.

    Only pedestrians strictly taller than ``height_filter_px`` are scored.
    A ground-truth pedestrian left unmatched counts as a wrong prediction
    (a missed crosser is a false negative, a missed non-crosser a false
    positive).
    """
    tp = fp = fn = tn = 0
    unmatched = 0
    for assignments, gt in frames:
        peds = [g for g in gt if g.cls == AgentClass.PEDESTRIAN]
        for g, a in match_assignments(assignments, peds):
            if not g.size[1] > height_filter_px:
                continue
            actual = g.intent == CROSS
            if a is None:
                unmatched += 1
                predicted = not actual
            else:
                predicted = a.crossing
            if actual and predicted:
                tp += 1
            elif actual:
                fn += 1
            elif predicted:
                fp += 1
            else:
                tn += 1
    n = tp + fp + fn + tn
    if n == 0:
        raise UndefinedMetricsError(f"no pedestrians taller than {height_filter_px} px to score")
    return IntentMetrics(
        accuracy=(tp + tn) / n,
        f1=f1_score(tp, fp, fn),
        confusion={"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        n_scored=n,
        n_unmatched=unmatched,
        height_filter_px=float(height_filter_px),
    )


def average_precision(scores: Sequence[float], is_tp: Sequence[bool], n_gt: int) -> tuple[float, np.ndarray, np.ndarray]:
    """101-point interpolated AP from score-ranked match flags."""
    if n_gt == 0:
        return 0.0, np.zeros(0), np.zeros(0)
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(is_tp, dtype=np.float64)[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    if len(precision) == 0:
        return 0.0, recall, precision
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean()), recall, precision


def detection_map(
    detections: list[list[Detection]],
    ground_truth: list[list[AgentState]],
    iou: float = 0.5,
    n_classes: int = 4,
    return_curves: bool = False,
):
    """mAP over classes present in the ground truth.

    ``detections[n]`` and ``ground_truth[n]`` belong to image ``n``. Within a
    class, detections are visited by descending score and each claims the
    unclaimed ground-truth box of highest IoU (>= ``iou``) in its image.
    """
    per_class: dict[str, float] = {}
    curves = {}
    for c in range(n_classes):
        gts = [[g for g in frame if int(g.cls) == c] for frame in ground_truth]
        n_gt = sum(len(g) for g in gts)
        if n_gt == 0:
            continue
        cand = [(d.score, img, d) for img, dets in enumerate(detections) for d in dets if d.class_id == c]
        cand.sort(key=lambda x: -x[0])
        claimed = [set() for _ in gts]
        scores, flags = [], []
        for score, img, d in cand:
            best, best_iou = None, iou
            for g_idx, g in enumerate(gts[img]):
                if g_idx in claimed[img]:
                    continue
                v = box_iou(d.box, g.box)
                if v >= best_iou:
                    best, best_iou = g_idx, v
            if best is not None:
                claimed[img].add(best)
            scores.append(score)
            flags.append(best is not None)
        ap, recall, precision = average_precision(scores, flags, n_gt)
        label = AgentClass(c).label
        per_class[label] = ap
        curves[label] = (recall, precision)
    m = float(np.mean(list(per_class.values()))) if per_class else 0.0
    if return_curves:
        return m, per_class, curves
    return m, per_class


@dataclass
class MetricsBundle:
    intent_accuracy: float | None
    intent_f1: float | None
    detection_map: float
    per_class_ap: dict[str, float]
    confusion: dict[str, int] | None
    height_filter_px: float
    by_height: dict[str, dict] = field(default_factory=dict)
    low_confidence: int = 0
    collisions: int = 0

    def to_dict(self) -> dict:
        return asdict(self)
