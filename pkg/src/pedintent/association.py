"""Single-shot and sequential inference pipelines.

The single-shot pipeline pairs each detected pedestrian with the intention
softmax stored at the very same ``(i, j, k)`` slot of the auxiliary output:
one array lookup per detection, independent of scene content. The
sequential pipeline instead classifies each pedestrian's crop sequence
separately, so its cost grows with the pedestrian count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from pedintent.errors import ConfigError, InvariantViolation
from pedintent.grid_codec import Detection, GridSpec, assign_cell_anchor, box_iou, decode_predictions
from pedintent.models import IntentModel, SequentialBaseline, crop_sequence
from pedintent.scenario_gen import INTENT_INDEX, AgentClass, AgentState, CROSS

CROSS_INDEX = INTENT_INDEX[CROSS]
PEDESTRIAN = int(AgentClass.PEDESTRIAN)
LOW_CONFIDENCE_MARGIN = 0.1


@dataclass(frozen=True)
class IntentAssignment:
    detection: Detection
    intent_prob: float  # probability of "cross"
    cell: tuple[int, int, int]

    @property
    def crossing(self) -> bool:
        return self.intent_prob >= 0.5

    @property
    def low_confidence(self) -> bool:
        return abs(self.intent_prob - 0.5) < LOW_CONFIDENCE_MARGIN


@dataclass
class PipelineOutput:
    detections: list[Detection]
    assignments: list[IntentAssignment]
    timings_ns: dict[str, int] = field(default_factory=dict)
    classifier_calls: int = 0


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def associate(detections: list[Detection], intent_logits) -> list[IntentAssignment]:
    if isinstance(intent_logits, torch.Tensor):
        intent_logits = intent_logits.detach().cpu().numpy()
    logits = np.asarray(intent_logits, dtype=np.float64)
    if logits.ndim != 4:
        raise ConfigError("intent_logits", f"expected H x W x A x N_I, got shape {logits.shape}")
    H, W, A, _ = logits.shape
    out = []
    for det in detections:
        if det.class_id != PEDESTRIAN:
            continue
        i, j, k = det.cell
        if not (0 <= i < H and 0 <= j < W and 0 <= k < A):
            raise InvariantViolation(f"detection cell {det.cell} outside intent grid {H}x{W}x{A}")
        prob = _softmax(logits[i, j, k])[CROSS_INDEX]
        out.append(IntentAssignment(det, float(prob), det.cell))
    return out


def _as_frames(frames) -> torch.Tensor:
    if isinstance(frames, np.ndarray):
        frames = torch.from_numpy(frames)
    elif isinstance(frames, (list, tuple)):
        frames = torch.stack([torch.as_tensor(f) for f in frames])
    return frames.float()


class _eval_mode:
    def __init__(self, *modules):
        self.modules = [m for m in modules if m is not None]

    def __enter__(self):
        self.was = [m.training for m in self.modules]
        for m in self.modules:
            m.eval()

    def __exit__(self, *exc):
        for m, was in zip(self.modules, self.was):
            m.train(was)


def pipeline_single_shot(
    frames,
    model: IntentModel,
    grid: GridSpec,
    conf_threshold: float = 0.5,
    nms_iou: float = 0.45,
) -> PipelineOutput:
    """Detector taps on every frame, decode on the last, one auxiliary pass, lookup."""
    frames = _as_frames(frames)
    if model.auxiliary is None:
        raise ConfigError("model", "single-shot pipeline needs an auxiliary head")
    t = model.auxiliary.config.seq_len
    if frames.shape[0] != t:
        raise ConfigError("frames", f"expected {t} frames, got {frames.shape[0]}")
    clock = time.perf_counter_ns
    det = model.detector
    with torch.no_grad(), _eval_mode(model):
        t0 = clock()
        taps = [det.forward_tap(frames[n : n + 1]) for n in range(t)]
        x = taps[-1]
        for block in det.blocks[det.config.tap_layer :]:
            x = block(x)
        raw = det.to_grid(det.head(x))[0]
        t1 = clock()
        intent = model.auxiliary(torch.stack(taps, dim=1))[0]
        t2 = clock()
        detections = decode_predictions(raw.numpy(), grid, conf_threshold, nms_iou)
        t3 = clock()
        assignments = associate(detections, intent.numpy())
        t4 = clock()
    timings = {"detector": t1 - t0, "auxiliary": t2 - t1, "decode": t3 - t2, "associate": t4 - t3, "total": t4 - t0}
    return PipelineOutput(detections, assignments, timings)


def _match_tracks(peds: list[Detection], gt: list[AgentState], iou_threshold: float = 0.5) -> list[int | None]:
    """Greedy by score: each detection takes the best unused GT pedestrian."""
    used: set[int] = set()
    track = [None] * len(peds)
    for n in sorted(range(len(peds)), key=lambda n: -peds[n].score):
        best, best_iou = None, iou_threshold
        for g in gt:
            if g.track_id in used:
                continue
            iou = box_iou(peds[n].box, g.box)
            if iou >= best_iou:
                best, best_iou = g, iou
        if best is not None:
            used.add(best.track_id)
            track[n] = best.track_id
    return track


def track_boxes(annotations: list[list[AgentState]], track_id: int | None, final_box) -> list:
    """Boxes of one track across the sequence, ending in ``final_box``.

    Frames where the track is absent reuse the nearest later box.
    """
    t = len(annotations)
    boxes = [None] * t
    boxes[-1] = tuple(final_box)
    if track_id is not None:
        for f in range(t - 1):
            for a in annotations[f]:
                if a.track_id == track_id:
                    boxes[f] = a.box
    for f in range(t - 2, -1, -1):
        if boxes[f] is None:
            boxes[f] = boxes[f + 1]
    return boxes


def ground_truth_detections(gt: list[AgentState], grid: GridSpec) -> list[Detection]:
    return [
        Detection(a.box, int(a.cls), 1.0, assign_cell_anchor(a.box, grid))
        for a in gt
        if a.cls == AgentClass.PEDESTRIAN
    ]


def pipeline_sequential(
    frames,
    model: IntentModel,
    baseline: SequentialBaseline,
    grid: GridSpec,
    annotations: list[list[AgentState]],
    conf_threshold: float = 0.5,
    nms_iou: float = 0.45,
    on_classify: Callable[[int | None], None] | None = None,
    oracle_pedestrians: bool = False,
) -> PipelineOutput:
    """Detect on the last frame, then classify every pedestrian's crop sequence.

    Past boxes come from the ground-truth track matched to each detection.
    With ``oracle_pedestrians`` the classifier runs on every ground-truth
    pedestrian instead of the detected ones (the detector still runs).
    """
    frames = _as_frames(frames)
    t = baseline.config.seq_len
    if frames.shape[0] != t or len(annotations) != t:
        raise ConfigError("frames", f"expected {t} frames with annotations")
    clock = time.perf_counter_ns
    with torch.no_grad(), _eval_mode(model, baseline):
        t0 = clock()
        _, raw = model.detector(frames[-1:])
        detections = decode_predictions(raw[0].numpy(), grid, conf_threshold, nms_iou)
        t1 = clock()
        gt_final = [a for a in annotations[-1] if a.cls == AgentClass.PEDESTRIAN]
        if oracle_pedestrians:
            peds = ground_truth_detections(gt_final, grid)
            tracks = [a.track_id for a in gt_final]
        else:
            peds = [d for d in detections if d.class_id == PEDESTRIAN]
            tracks = _match_tracks(peds, gt_final)
        crop_ns = cls_ns = 0
        assignments = []
        calls = 0
        for det, track in zip(peds, tracks):
            c0 = clock()
            crops = crop_sequence(frames, track_boxes(annotations, track, det.box), baseline.config.crop_size)
            c1 = clock()
            logit = baseline(crops)
            c2 = clock()
            calls += 1
            if on_classify is not None:
                on_classify(track)
            crop_ns += c1 - c0
            cls_ns += c2 - c1
            assignments.append(IntentAssignment(det, float(torch.sigmoid(logit).item()), det.cell))
        t2 = clock()
    timings = {"detector": t1 - t0, "crop": crop_ns, "classifier": cls_ns, "total": t2 - t0}
    return PipelineOutput(detections, assignments, timings, classifier_calls=calls)
