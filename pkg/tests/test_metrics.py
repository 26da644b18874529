import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedintent.association import IntentAssignment
from pedintent.errors import UndefinedMetricsError
from pedintent.eval_bench.metrics import average_precision, detection_map, f1_score, intent_metrics
from pedintent.grid_codec import Detection
from pedintent.scenario_gen import CROSS, NOT_CROSS, AgentClass, AgentState


def _gt(tid, cx, h=30.0, intent=CROSS, cls=AgentClass.PEDESTRIAN):
    if cls != AgentClass.PEDESTRIAN:
        return AgentState(tid, cls, (cx, 50.0), (12.0, h))
    return AgentState(tid, cls, (cx, 50.0), (12.0, h), intent=intent, heading=(0.0, 1.0))


def _assign(g, prob, score=0.9):
    d = Detection(g.box, int(g.cls), score, (0, 0, 0))
    return IntentAssignment(d, prob, d.cell)


def test_f1_examples():
    assert f1_score(2, 1, 1) == pytest.approx(2 / 3)
    assert f1_score(0, 0, 0) == 0.0


def test_confusion_and_f1_from_assignments():
    gts = [_gt(0, 20, intent=CROSS), _gt(1, 60, intent=CROSS), _gt(2, 100, intent=NOT_CROSS), _gt(3, 140, intent=CROSS)]
    # tp, tp, fp (non-crosser called crossing), fn (crosser missed by the detector)
    assigns = [_assign(gts[0], 0.8), _assign(gts[1], 0.7), _assign(gts[2], 0.6)]
    m = intent_metrics([(assigns, gts)], 0.0)
    assert m.confusion == {"tp": 2, "fp": 1, "fn": 1, "tn": 0}
    assert m.f1 == pytest.approx(2 / 3) and m.accuracy == 0.5 and m.n_unmatched == 1


def test_unmatched_non_crosser_is_a_false_positive():
    m = intent_metrics([([], [_gt(0, 20, intent=NOT_CROSS)])], 0.0)
    assert m.confusion["fp"] == 1 and m.accuracy == 0.0


def test_height_filter_is_strict():
    g = _gt(0, 20, h=120.0)
    m = intent_metrics([([_assign(g, 0.9)], [g, _gt(1, 80, h=121.0)])], 120.0)
    assert m.n_scored == 1


def test_all_correct():
    gts = [_gt(n, 20 + 20 * n, intent=CROSS if n % 2 else NOT_CROSS) for n in range(10)]
    assigns = [_assign(g, 0.9 if g.intent == CROSS else 0.1) for g in gts]
    m = intent_metrics([(assigns, gts)], 0.0)
    assert m.accuracy == 1.0 and m.f1 == 1.0


def test_nothing_to_score_is_undefined():
    with pytest.raises(UndefinedMetricsError):
        intent_metrics([], 0.0)
    with pytest.raises(UndefinedMetricsError):
        intent_metrics([([], [_gt(0, 20, h=10.0)])], 30.0)


@settings(max_examples=30, deadline=None)
@given(heights=st.lists(st.floats(5, 200), min_size=1, max_size=12), lo=st.floats(0, 100), step=st.floats(0, 100))
def test_filter_monotonicity(heights, lo, step):
    gts = [_gt(n, 15.0 + 30 * n, h=h) for n, h in enumerate(heights)]

    def scored(th):
        try:
            return intent_metrics([([], gts)], th).n_scored
        except UndefinedMetricsError:
            return 0

    assert scored(lo + step) <= scored(lo)


def test_metrics_are_deterministic():
    gts = [_gt(n, 20 + 30 * n) for n in range(4)]
    assigns = [_assign(g, 0.3 + 0.1 * n) for n, g in enumerate(gts)]
    assert intent_metrics([(assigns, gts)], 0.0) == intent_metrics([(list(assigns), list(gts))], 0.0)


# ----------------------------------------------------------------------- mAP


def test_perfect_single_class():
    gts = [[_gt(0, 20), _gt(1, 80)]]
    dets = [[Detection(g.box, 0, 0.9, (0, 0, 0)) for g in gts[0]]]
    m, per = detection_map(dets, gts)
    assert m == 1.0 and per == {"pedestrian": 1.0}


def test_no_detections():
    assert detection_map([[]], [[_gt(0, 20)]])[0] == 0.0


def test_toy_pr_staircase():
    g1, g2 = _gt(0, 20), _gt(1, 80)
    far = Detection((200.0, 50.0, 12.0, 30.0), 0, 0.8, (0, 0, 0))
    dets = [[Detection(g1.box, 0, 0.9, (0, 0, 0)), far, Detection(g2.box, 0, 0.7, (0, 0, 0))]]
    # ranked hits 1,0,1 -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    # envelope: 1 on recall points 0..0.50 (51 of them), 2/3 on 0.51..1.00 (50)
    m, _ = detection_map(dets, [[g1, g2]])
    assert m == pytest.approx((51 + 50 * 2 / 3) / 101, abs=1e-9)
    assert m == pytest.approx(253 / 303, abs=1e-9)


def test_map_averages_present_classes_only():
    car = _gt(5, 200, cls=AgentClass.VEHICLE)
    ped = _gt(0, 20)
    dets = [[Detection(ped.box, 0, 0.9, (0, 0, 0))]]
    m, per = detection_map(dets, [[ped, car]])
    assert per == {"pedestrian": 1.0, "vehicle": 0.0} and m == 0.5


@settings(max_examples=50, deadline=None)
@given(flags=st.lists(st.booleans(), min_size=1, max_size=15), extra=st.integers(0, 3))
def test_ap_bounds_and_trailing_false_positive(flags, extra):
    n_gt = sum(flags) + extra
    if n_gt == 0:
        return
    scores = list(np.linspace(1.0, 0.5, len(flags)))
    ap, _, _ = average_precision(scores, flags, n_gt)
    assert 0.0 <= ap <= 1.0
    ap2, _, _ = average_precision(scores + [0.1], flags + [False], n_gt)
    assert ap2 <= ap
