import json

import numpy as np
import pytest
import torch

from pedintent.config import RunConfig
from pedintent.errors import BenchmarkError, ConfigError
from pedintent.eval_bench.ablation import unique_layers
from pedintent.eval_bench.bench import LatencyReport, bench_scenes, conv_macs, latency_bench, memory_report
from pedintent.eval_bench.report import write_report
from pedintent.models import Detector, SequentialBaseline
from pedintent.models.convlstm import AuxiliaryHead
from pedintent.scenario_gen import AgentClass

DESK = RunConfig.from_preset("desk")


class FakeClock:
    def __init__(self):
        self.t = 0

    def __call__(self):
        return self.t


def _stub(clock, per_ped, base, jitter_seed=None):
    rng = np.random.default_rng(jitter_seed) if jitter_seed is not None else None

    def run(count):
        cost = base + per_ped * count
        if rng is not None:
            cost += int(rng.integers(0, per_ped // 50 + 1))
        clock.t += cost
        return {"classifier": per_ped * count}

    return run


def test_fake_clock_slope_is_recovered():
    clock = FakeClock()
    c = 1_000_000  # 1 ms per pedestrian
    rep = latency_bench({"seq": _stub(clock, c, 5_000_000, jitter_seed=0)}, clock=clock, resolution_ns=1, n_boot=200)
    fit = rep.slopes["seq"]
    assert fit.slope_ms == pytest.approx(1.0, rel=0.01)
    assert fit.ci_low_ms <= fit.slope_ms <= fit.ci_high_ms
    assert rep.median_ms("seq", 16, "classifier") == pytest.approx(16.0)


def test_constant_cost_has_zero_slope():
    clock = FakeClock()
    rep = latency_bench({"ss": _stub(clock, 0, 3_000_000)}, clock=clock, resolution_ns=1, n_boot=50)
    assert rep.slopes["ss"].slope_ms == 0.0
    assert rep.slopes["ss"].ci_low_ms == rep.slopes["ss"].ci_high_ms == 0.0


def test_warmup_runs_are_excluded():
    clock = FakeClock()
    seen = []

    def run(count):
        in_bucket = len(seen) % 35  # 5 warmups then 30 reps per bucket
        seen.append(count)
        clock.t += 10**9 if in_bucket < 5 else 10_000
        return {}

    rep = latency_bench({"x": run}, counts=(1, 2), clock=clock, resolution_ns=1, n_boot=10)
    assert len(rep.samples_ms["x"]["1"]) == 30
    assert max(rep.samples_ms["x"]["1"] + rep.samples_ms["x"]["2"]) == pytest.approx(0.01)


def test_coarse_timer_is_rejected():
    clock = FakeClock()
    with pytest.raises(BenchmarkError, match="larger preset"):
        latency_bench({"x": _stub(clock, 0, 50)}, clock=clock, resolution_ns=1)


def test_too_few_reps_rejected():
    with pytest.raises(ConfigError):
        latency_bench({"x": lambda c: {}}, reps=10)


def test_report_json_round_trip():
    clock = FakeClock()
    rep = latency_bench({"a": _stub(clock, 500_000, 2_000_000, 1)}, clock=clock, resolution_ns=1, n_boot=20)
    text = rep.to_json()
    again = LatencyReport.from_json(text)
    assert again.to_json() == text
    assert json.loads(text)["schema_version"] == 1
    assert set(again.buckets["a"]) == {"1", "2", "4", "8", "16"}


def test_bench_scenes_differ_only_in_pedestrians():
    scenes = bench_scenes(DESK.world)
    assert sorted(scenes) == [1, 2, 4, 8, 16]
    for k, seq in scenes.items():
        last = seq.annotations[-1]
        assert sum(a.cls == AgentClass.PEDESTRIAN for a in last) == k
        others = [a.to_dict() for a in last if a.cls != AgentClass.PEDESTRIAN]
        assert others == [a.to_dict() for a in scenes[1].annotations[-1] if a.cls != AgentClass.PEDESTRIAN]
    cells = {(int(a.center[1] // 32), int(a.center[0] // 32)) for a in scenes[16].annotations[-1] if a.cls == 0}
    assert len(cells) == 16


def test_memory_report_accounting():
    det = Detector(DESK.detector)
    aux = AuxiliaryHead(DESK.auxiliary())
    base = SequentialBaseline(DESK.sequential)
    rep = memory_report(det, aux, base)
    d = sum(p.numel() for p in det.parameters()) * 4
    a = sum(p.numel() for p in aux.parameters()) * 4
    b = sum(p.numel() for p in base.parameters()) * 4
    assert rep.single_shot_total_bytes == d + a
    assert rep.sequential_total_bytes == d + b
    assert rep.delta_bytes == b - a


def test_conv_macs_single_layer():
    conv = torch.nn.Conv2d(2, 4, 3, padding=1)
    assert conv_macs(conv, torch.zeros(1, 2, 5, 5)) == 4 * 25 * 18


def test_duplicate_layers_warn_and_dedupe():
    with pytest.warns(UserWarning, match="duplicate"):
        assert unique_layers([5, 3, 5, 4]) == [3, 4, 5]
    with pytest.raises(ConfigError), pytest.warns(UserWarning):
        unique_layers([4, 4])


def test_write_report(tmp_path):
    write_report(tmp_path, "eval", {"metrics": {"acc": 0.5, "per_class": {"pedestrian": 1.0}}, "counts": [1, 2]})
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["schema_version"] == 1 and doc["kind"] == "eval"
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert "metrics.per_class.pedestrian,1.0" in lines and "counts,1;2" in lines
