"""Grid-anchor encoding shared by the detection and intention heads.

Tensor layout is row-major ``(i, j, k, channel)``: grid row, grid column,
anchor. Detection channels are ``[objectness, class_0..class_{N_C-1}, tx,
ty, tw, th]`` with

    tx = cx / stride - j        ty = cy / stride - i
    tw = ln(w / anchor_w)       th = ln(h / anchor_h)

Raw network outputs pass objectness and (tx, ty) through the logistic
function before inversion; class scores go through a softmax.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from pedintent.errors import AssignmentError, ConfigError, NumericError
from pedintent.scenario_gen import INTENT_INDEX, AgentClass, AgentState


@dataclass(frozen=True)
class GridSpec:
    H: int
    W: int
    stride: int
    anchors: tuple[tuple[float, float], ...]
    n_classes: int = 4
    n_intents: int = 2

    def __post_init__(self):
        if len(self.anchors) < 1:
            raise ConfigError("anchors", "need at least one anchor")
        if self.n_classes < 1:
            raise ConfigError("n_classes", "must be >= 1")
        if self.n_intents != 2:
            raise ConfigError("n_intents", "only binary intent (N_I = 2) is supported")

    @property
    def A(self) -> int:
        return len(self.anchors)

    @property
    def depth(self) -> int:
        return 1 + self.n_classes + 4

    @property
    def image_size(self) -> tuple[int, int]:
        return self.H * self.stride, self.W * self.stride

    def check_image(self, height: int, width: int) -> None:
        if (height, width) != self.image_size:
            raise ConfigError("grid", f"grid {self.H}x{self.W} @ stride {self.stride} does not tile a {height}x{width} image")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"] = [list(a) for a in self.anchors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        d["anchors"] = tuple(tuple(float(v) for v in a) for a in d["anchors"])
        return cls(**d)


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]  # cx, cy, w, h in px
    class_id: int
    score: float
    cell: tuple[int, int, int]


@dataclass
class EncodedTargets:
    detection: np.ndarray  # H x W x A x (1 + N_C + 4)
    intent: np.ndarray  # H x W x A x N_I
    mask: np.ndarray  # H x W x A
    dropped: int = 0  # collisions resolved by keeping the larger box


def centered_iou(w1: float, h1: float, w2: float, h2: float) -> float:
    inter = min(w1, w2) * min(h1, h2)
    return inter / (w1 * h1 + w2 * h2 - inter)


def assign_cell_anchor(box: tuple[float, float, float, float], spec: GridSpec) -> tuple[int, int, int]:
    cx, cy, w, h = box
    img_h, img_w = spec.image_size
    if not (0.0 <= cx < img_w and 0.0 <= cy < img_h):
        raise AssignmentError(f"box center ({cx}, {cy}) outside {img_w}x{img_h} image")
    i = int(math.floor(cy / spec.stride))
    j = int(math.floor(cx / spec.stride))
    ious = [centered_iou(w, h, aw, ah) for aw, ah in spec.anchors]
    k = int(np.argmax(ious))  # first maximum -> lowest k on ties
    return i, j, k


def encode_targets(annotations: list[AgentState], spec: GridSpec) -> EncodedTargets:
    det = np.zeros((spec.H, spec.W, spec.A, spec.depth), dtype=np.float64)
    intent = np.zeros((spec.H, spec.W, spec.A, spec.n_intents), dtype=np.float64)
    mask = np.zeros((spec.H, spec.W, spec.A), dtype=np.float64)
    areas: dict[tuple[int, int, int], float] = {}
    dropped = 0
    nc = spec.n_classes
    for ann in annotations:
        cx, cy, w, h = ann.box
        cell = assign_cell_anchor(ann.box, spec)
        area = w * h
        if cell in areas:
            dropped += 1
            if area <= areas[cell]:
                continue
        areas[cell] = area
        i, j, k = cell
        aw, ah = spec.anchors[k]
        det[i, j, k] = 0.0
        det[i, j, k, 0] = 1.0
        det[i, j, k, 1 + int(ann.cls)] = 1.0
        det[i, j, k, 1 + nc :] = (cx / spec.stride - j, cy / spec.stride - i, math.log(w / aw), math.log(h / ah))
        intent[i, j, k] = 0.0
        mask[i, j, k] = 0.0
        if ann.cls == AgentClass.PEDESTRIAN:
            mask[i, j, k] = 1.0
            intent[i, j, k, INTENT_INDEX[ann.intent]] = 1.0
    return EncodedTargets(det, intent, mask, dropped)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def box_iou(a: tuple, b: tuple) -> float:
    """IoU of two (cx, cy, w, h) boxes."""
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def nms(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-class non-maximum suppression; stable for equal scores."""
    order = sorted(range(len(detections)), key=lambda n: -detections[n].score)
    kept: list[Detection] = []
    for n in order:
        d = detections[n]
        if all(k.class_id != d.class_id or box_iou(k.box, d.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def decode_predictions(
    raw,
    spec: GridSpec,
    conf_threshold: float = 0.5,
    nms_iou: float = 0.45,
    activated: bool = False,
) -> list[Detection]:
    """Turn an ``H x W x A x (1+N_C+4)`` tensor into scored detections.

    ``activated=True`` treats ``raw`` as already in target space (objectness
    and class as probabilities, tx/ty as offsets), which lets an encoded
    target be decoded directly. Score is objectness times the winning class
    probability.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (spec.H, spec.W, spec.A, spec.depth):
        raise ConfigError("raw", f"expected shape {(spec.H, spec.W, spec.A, spec.depth)}, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite values in detector output")
    nc = spec.n_classes
    if activated:
        obj = raw[..., 0]
        cls_prob = raw[..., 1 : 1 + nc]
        txy = raw[..., 1 + nc : 3 + nc]
    else:
        obj = _sigmoid(raw[..., 0])
        logits = raw[..., 1 : 1 + nc]
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        cls_prob = e / e.sum(axis=-1, keepdims=True)
        # keep offsets strictly inside the cell so the box maps back to (i, j)
        txy = np.minimum(_sigmoid(raw[..., 1 + nc : 3 + nc]), 1.0 - 1e-9)
    twh = raw[..., 3 + nc : 5 + nc]
    class_id = cls_prob.argmax(axis=-1)
    score = obj * np.take_along_axis(cls_prob, class_id[..., None], axis=-1)[..., 0]

    anchors = np.asarray(spec.anchors, dtype=np.float64)
    out: list[Detection] = []
    for i, j, k in zip(*np.nonzero(score >= conf_threshold)):
        cx = (j + txy[i, j, k, 0]) * spec.stride
        cy = (i + txy[i, j, k, 1]) * spec.stride
        w = anchors[k, 0] * math.exp(twh[i, j, k, 0])
        h = anchors[k, 1] * math.exp(twh[i, j, k, 1])
        out.append(Detection((float(cx), float(cy), float(w), float(h)), int(class_id[i, j, k]), float(score[i, j, k]), (int(i), int(j), int(k))))
    return nms(out, nms_iou)
