import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pedintent.association import associate, pipeline_sequential, pipeline_single_shot, track_boxes
from pedintent.config import RunConfig
from pedintent.errors import ConfigError, InvariantViolation
from pedintent.grid_codec import Detection
from pedintent.models import IntentModel, SequentialBaseline
from pedintent.scenario_gen import CROSS, AgentClass, AgentState, WorldConfig, generate_sequence

DESK = RunConfig.from_preset("desk")


def _det(cell, cls=0, score=0.9):
    return Detection((10.0, 10.0, 5.0, 12.0), cls, score, cell)


def test_lookup_reads_own_cell():
    logits = np.zeros((6, 10, 5, 2))
    logits[2, 3, 1] = (math.log(0.1), math.log(0.9))
    (a,) = associate([_det((2, 3, 1))], logits)
    assert a.intent_prob == pytest.approx(0.9, abs=1e-12)
    assert a.crossing and not a.low_confidence and a.cell == (2, 3, 1)


def test_non_pedestrians_are_skipped():
    assert associate([_det((0, 0, 0), cls=2)], np.zeros((2, 2, 1, 2))) == []


def test_cell_outside_grid_is_an_invariant_violation():
    with pytest.raises(InvariantViolation):
        associate([_det((2, 0, 0))], np.zeros((2, 2, 1, 2)))


def test_low_confidence_flag():
    logits = np.zeros((1, 1, 1, 2))
    logits[0, 0, 0, 1] = 0.2  # p = 0.55
    assert associate([_det((0, 0, 0))], logits)[0].low_confidence


def _scan(det, logits):
    """Walk every slot until the detection's own one; the result must equal the lookup."""
    H, W, A, _ = logits.shape
    for i in range(H):
        for j in range(W):
            for k in range(A):
                if (i, j, k) == det.cell:
                    e = np.exp(logits[i, j, k] - logits[i, j, k].max())
                    return e[1] / e.sum()
    raise AssertionError("cell not found")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(0, 12))
def test_lookup_matches_scan(seed, n):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 5, size=(6, 10, 5, 2))
    dets = [_det(tuple(int(x) for x in rng.integers((6, 10, 5))), int(rng.integers(0, 2))) for _ in range(n)]
    out = associate(dets, logits)
    peds = [d for d in dets if d.class_id == 0]
    assert len(out) == len(peds)
    for a, d in zip(out, peds):
        assert a.detection is d
        assert a.intent_prob == pytest.approx(_scan(d, logits), abs=1e-12)


@pytest.fixture(scope="module")
def scene():
    torch.manual_seed(0)
    model = IntentModel(DESK.detector, DESK.auxiliary()).eval()
    baseline = SequentialBaseline(DESK.sequential).eval()
    seq = generate_sequence(WorldConfig(n_pedestrians=3), 4)
    return model, baseline, torch.from_numpy(seq.stacked()), seq.annotations


def test_pipelines_share_detections(scene):
    model, baseline, frames, anns = scene
    ss = pipeline_single_shot(frames, model, DESK.grid, conf_threshold=0.1)
    sq = pipeline_sequential(frames, model, baseline, DESK.grid, anns, conf_threshold=0.1)
    assert len(ss.detections) > 0
    assert ss.detections == sq.detections
    assert set(ss.timings_ns) == {"detector", "auxiliary", "decode", "associate", "total"}
    assert ss.classifier_calls == 0


def test_sequential_invocations_equal_pedestrians(scene):
    model, baseline, frames, anns = scene
    seen = []
    out = pipeline_sequential(frames, model, baseline, DESK.grid, anns, on_classify=seen.append, oracle_pedestrians=True)
    peds = sorted(a.track_id for a in anns[-1] if a.cls == 0)
    assert out.classifier_calls == len(peds) == 3
    assert sorted(seen) == peds
    assert len(out.assignments) == 3


def test_single_shot_rejects_wrong_length(scene):
    model, _, frames, _ = scene
    with pytest.raises(ConfigError):
        pipeline_single_shot(frames[:4], model, DESK.grid)


def test_track_boxes_fill_gaps_backward():
    a = AgentState(7, AgentClass.PEDESTRIAN, (5.0, 5.0), (2.0, 4.0), intent=CROSS, heading=(0.0, 1.0))
    anns = [[], [a], []]
    boxes = track_boxes(anns, 7, (9.0, 9.0, 2.0, 4.0))
    assert boxes == [a.box, a.box, (9.0, 9.0, 2.0, 4.0)]
    assert track_boxes(anns, None, (1.0, 1.0, 1.0, 1.0)) == [(1.0, 1.0, 1.0, 1.0)] * 3
