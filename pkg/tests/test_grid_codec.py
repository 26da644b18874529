import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedintent.config import RunConfig
from pedintent.errors import AssignmentError, NumericError
from pedintent.grid_codec import (
    Detection,
    GridSpec,
    assign_cell_anchor,
    box_iou,
    decode_predictions,
    encode_targets,
    nms,
)
from pedintent.scenario_gen import CROSS, NOT_CROSS, AgentClass, AgentState, WorldConfig, generate_sequence

SPEC = GridSpec(6, 10, 32, ((16.0, 40.0), (24.0, 56.0), (48.0, 48.0)))
DESK = RunConfig.from_preset("desk").grid


def _ped(cx, cy, w=12.0, h=30.0, intent=CROSS, tid=0):
    return AgentState(tid, AgentClass.PEDESTRIAN, (cx, cy), (w, h), intent=intent, heading=(0.0, -1.0))


def _pixel_iou(w1, h1, w2, h2):
    """Centered IoU by counting half-pixel cells; independent of the closed form."""
    n = 200
    ys, xs = np.mgrid[-n:n, -n:n] / 2.0 + 0.25
    a = (np.abs(xs) < w1 / 2) & (np.abs(ys) < h1 / 2)
    b = (np.abs(xs) < w2 / 2) & (np.abs(ys) < h2 / 2)
    return (a & b).sum() / (a | b).sum()


def test_cell_index_floor_arithmetic():
    assert assign_cell_anchor((96.0, 48.0, 20.0, 48.0), SPEC)[:2] == (1, 3)
    assert assign_cell_anchor((64.0, 10.0, 20.0, 48.0), SPEC)[1] == 2


def test_anchor_choice_matches_brute_force():
    ious = [_pixel_iou(20, 48, aw, ah) for aw, ah in SPEC.anchors]
    assert int(np.argmax(ious)) == 1
    assert assign_cell_anchor((100.0, 100.0, 20.0, 48.0), SPEC)[2] == 1


def test_anchor_ties_take_lowest_index():
    spec = GridSpec(2, 2, 32, ((10.0, 10.0), (10.0, 10.0)))
    assert assign_cell_anchor((5.0, 5.0, 10.0, 10.0), spec)[2] == 0


@pytest.mark.parametrize("center", [(-1.0, 10.0), (320.0, 10.0), (10.0, 192.0)])
def test_center_outside_image_raises(center):
    with pytest.raises(AssignmentError):
        assign_cell_anchor((*center, 10.0, 10.0), SPEC)


def test_empty_annotations_encode_to_zero():
    enc = encode_targets([], DESK)
    assert not enc.detection.any() and not enc.intent.any() and not enc.mask.any()


def test_single_pedestrian_sets_one_mask_cell():
    enc = encode_targets([_ped(100.0, 150.0)], DESK)
    assert enc.mask.sum() == 1
    i, j, k = assign_cell_anchor((100.0, 150.0, 12.0, 30.0), DESK)
    assert enc.mask[i, j, k] == 1
    assert enc.intent[i, j, k, 1] == 1 and enc.intent[i, j, k, 0] == 0
    assert enc.detection[i, j, k, 0] == 1 and enc.detection[i, j, k, 1] == 1
    tx, ty, tw, th = enc.detection[i, j, k, 5:]
    assert tx == pytest.approx(100 / 32 - j) and ty == pytest.approx(150 / 32 - i)
    assert tw == pytest.approx(math.log(12 / DESK.anchors[k][0]))


def test_collision_keeps_larger_box():
    small, big = _ped(100.0, 150.0, 12.0, 30.0, NOT_CROSS, 0), _ped(102.0, 152.0, 13.0, 32.0, CROSS, 1)
    enc = encode_targets([small, big], DESK)
    assert enc.dropped == 1
    assert enc.mask.sum() == 1
    i, j, k = assign_cell_anchor(big.box, DESK)
    assert enc.intent[i, j, k, 1] == 1  # big one is the crosser
    enc2 = encode_targets([big, small], DESK)
    assert np.array_equal(enc.detection, enc2.detection)


def test_paper_shape_entry_counts():
    grid = RunConfig.from_preset("paper-shape").grid
    enc = encode_targets([], grid)
    assert enc.detection.shape == (11, 20, 5, 9) and enc.detection.size == 9900
    assert enc.intent.shape == (11, 20, 5, 2) and enc.intent.size == 2200
    assert enc.mask.shape == (11, 20, 5)


def _scene(seed):
    return generate_sequence(WorldConfig(n_pedestrians=3), seed).annotations[-1]


@pytest.mark.parametrize("seed", range(20))
def test_encode_decode_round_trip(seed):
    ann = _scene(seed)
    enc = encode_targets(ann, DESK)
    dets = decode_predictions(enc.detection, DESK, 0.5, activated=True)
    assert len(dets) == len(ann) - enc.dropped
    for a in ann:
        match = [d for d in dets if d.class_id == int(a.cls) and np.allclose(d.box, a.box, atol=1e-6)]
        assert len(match) == 1
        assert match[0].cell == assign_cell_anchor(a.box, DESK)
    # mask <-> pedestrian objectness
    ped_obj = (enc.detection[..., 0] == 1) & (enc.detection[..., 1] == 1)
    assert np.array_equal(enc.mask == 1, ped_obj)


def _logit(p):
    return math.log(p / (1 - p))


def test_decode_all_negative_is_empty():
    raw = np.full((DESK.H, DESK.W, DESK.A, DESK.depth), -20.0)
    assert decode_predictions(raw, DESK) == []


def test_decode_single_peak_from_encoding():
    box = (150.0, 70.0, 50.0, 22.0)
    car = AgentState(0, AgentClass.VEHICLE, box[:2], box[2:])
    enc = encode_targets([car], DESK)
    i, j, k = assign_cell_anchor(box, DESK)
    raw = np.full(enc.detection.shape, -20.0)
    t = enc.detection[i, j, k]
    raw[i, j, k, 0] = 8.0
    raw[i, j, k, 1:5] = np.where(t[1:5] == 1, 10.0, 0.0)
    raw[i, j, k, 5] = _logit(t[5])
    raw[i, j, k, 6] = _logit(t[6])
    raw[i, j, k, 7:] = t[7:]
    dets = decode_predictions(raw, DESK)
    assert len(dets) == 1
    d = dets[0]
    assert d.cell == (i, j, k) and d.class_id == int(AgentClass.VEHICLE)
    assert np.allclose(d.box, box, atol=0.1)


def _square_iou_bruteforce(dx):
    grid = np.arange(0, 40, 0.05) + 0.025
    xs, ys = np.meshgrid(grid, grid)
    a = (xs >= 10) & (xs < 20) & (ys >= 10) & (ys < 20)
    b = (xs >= 10 + dx) & (xs < 20 + dx) & (ys >= 10) & (ys < 20)
    return (a & b).sum() / (a | b).sum()


def test_nms_suppresses_overlap_at_iou_08():
    dx = 10 - 80 / 9  # two 10x10 squares at IoU 0.8
    assert _square_iou_bruteforce(dx) == pytest.approx(0.8, abs=0.01)
    a = Detection((15.0, 15.0, 10.0, 10.0), 0, 0.9, (0, 0, 0))
    b = Detection((15.0 + dx, 15.0, 10.0, 10.0), 0, 0.7, (0, 0, 1))
    assert box_iou(a.box, b.box) == pytest.approx(0.8)
    assert nms([b, a], 0.5) == [a]
    # different classes never suppress each other
    c = Detection(b.box, 1, 0.7, b.cell)
    assert nms([a, c], 0.5) == [a, c]


def test_decode_nms_on_two_peaks():
    raw = np.zeros((DESK.H, DESK.W, DESK.A, DESK.depth))
    for k, score, cx in ((1, 0.9, 100.0), (0, 0.8, 101.5)):
        raw[2, 3, k, 0] = score
        raw[2, 3, k, 1] = 1.0
        raw[2, 3, k, 5:7] = (cx / 32 - 3, 80 / 32 - 2)
        raw[2, 3, k, 7:] = (math.log(12 / DESK.anchors[k][0]), math.log(30 / DESK.anchors[k][1]))
    dets = decode_predictions(raw, DESK, 0.5, 0.5, activated=True)
    assert len(dets) == 1 and dets[0].score == pytest.approx(0.9) and dets[0].cell == (2, 3, 1)
    assert len(decode_predictions(raw, DESK, 0.5, 0.95, activated=True)) == 2


def test_decode_rejects_non_finite():
    raw = np.zeros((DESK.H, DESK.W, DESK.A, DESK.depth))
    raw[0, 0, 0, 3] = np.nan
    with pytest.raises(NumericError):
        decode_predictions(raw, DESK)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_decoded_cells_are_provenant(seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(0, 4, size=(DESK.H, DESK.W, DESK.A, DESK.depth))
    raw[..., 5:7] *= 10  # push offsets toward saturation
    for d in decode_predictions(raw, DESK, 0.3, 1.0):
        assert assign_cell_anchor(d.box, DESK)[:2] == d.cell[:2]
