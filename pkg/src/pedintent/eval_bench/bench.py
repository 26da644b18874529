"""Latency and memory benchmarks for the single-shot and sequential pipelines.

Latency buckets are measured on a scene family whose members differ only in
the number of (standing) pedestrians. A fitted slope in ms per added
pedestrian summarizes how each pipeline scales; its confidence interval is
a bootstrap over repetitions.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
from torch import nn

from pedintent.errors import BenchmarkError, ConfigError
from pedintent.models import parameter_count
from pedintent.scenario_gen import NOT_CROSS, AgentClass, AgentState, SceneSequence, WorldConfig, simulate

SCHEMA_VERSION = 1
MIN_TICKS = 100

Runner = Callable[[int], Mapping[str, int]]


@dataclass
class SlopeFit:
    slope_ms: float
    intercept_ms: float
    ci_low_ms: float
    ci_high_ms: float


@dataclass
class LatencyReport:
    counts: list[int]
    reps: int
    warmup: int
    # pipeline -> str(count) -> stage -> {"median_ms", "p95_ms"}
    buckets: dict[str, dict[str, dict[str, dict[str, float]]]]
    # pipeline -> str(count) -> per-rep wall ms
    samples_ms: dict[str, dict[str, list[float]]]
    slopes: dict[str, SlopeFit]
    classifier_calls: dict[str, dict[str, int]] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def median_ms(self, pipeline: str, count: int, stage: str = "wall") -> float:
        return self.buckets[pipeline][str(count)][stage]["median_ms"]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"unsupported latency report schema {d.get('schema_version')!r}")
        return cls(
            counts=[int(c) for c in d["counts"]],
            reps=int(d["reps"]),
            warmup=int(d["warmup"]),
            buckets=d["buckets"],
            samples_ms=d["samples_ms"],
            slopes={k: SlopeFit(**v) for k, v in d["slopes"].items()},
            classifier_calls=d.get("classifier_calls", {}),
            schema_version=d["schema_version"],
        )

    @classmethod
    def from_json(cls, text: str) -> "LatencyReport":
        return cls.from_dict(json.loads(text))


def ols_slope(x, y) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    slope = float((xc * (y - y.mean())).sum() / (xc * xc).sum())
    return slope, float(y.mean() - slope * x.mean())


def bootstrap_slope(counts, samples: list[np.ndarray], n_boot: int, seed: int) -> tuple[float, float]:
    """95% interval of the OLS slope through per-count medians, resampling reps."""
    rng = np.random.default_rng(seed)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        meds = [np.median(s[rng.integers(0, len(s), len(s))]) for s in samples]
        slopes[b] = ols_slope(counts, meds)[0]
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return float(lo), float(hi)


def _clock_resolution_ns() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e9


def latency_bench(
    runners: Mapping[str, Runner],
    counts=(1, 2, 4, 8, 16),
    reps: int = 30,
    warmup: int = 5,
    clock: Callable[[], int] = time.perf_counter_ns,
    resolution_ns: float | None = None,
    n_boot: int = 1000,
    seed: int = 0,
    calls: Mapping[str, Callable[[], int]] | None = None,
) -> LatencyReport:
    """Time each runner at each pedestrian count.

    ``runners[name](count)`` runs one inference and returns its per-stage
    timings in ns (possibly empty); the harness adds a ``wall`` stage from
    ``clock``. Warmup runs are discarded. ``calls[name]()`` optionally reads
    a classifier invocation counter after each bucket's last rep.
    """
    if reps < 30 or warmup < 5:
        raise ConfigError("reps", "need >= 30 timed repetitions after >= 5 warmups")
    counts = sorted(set(int(c) for c in counts))
    if len(counts) < 2:
        raise ConfigError("counts", "need at least two pedestrian counts to fit a slope")
    resolution = resolution_ns if resolution_ns is not None else _clock_resolution_ns()
    buckets: dict = {}
    samples: dict = {}
    slopes: dict = {}
    invocations: dict = {}
    for name, run in runners.items():
        buckets[name], samples[name], invocations[name] = {}, {}, {}
        for count in counts:
            for _ in range(warmup):
                run(count)
            stages: dict[str, list[int]] = {}
            before = calls[name]() if calls and name in calls else None
            for _ in range(reps):
                t0 = clock()
                timings = dict(run(count))
                wall = clock() - t0
                if wall < MIN_TICKS * resolution:
                    raise BenchmarkError(
                        f"{name} at {count} pedestrians took {wall} ns, under {MIN_TICKS} clock ticks; "
                        "use a larger preset (e.g. paper-shape)"
                    )
                timings["wall"] = wall
                for k, v in timings.items():
                    stages.setdefault(k, []).append(v)
            if before is not None:
                invocations[name][str(count)] = (calls[name]() - before) // reps
            buckets[name][str(count)] = {
                k: {"median_ms": float(np.median(v)) / 1e6, "p95_ms": float(np.percentile(v, 95)) / 1e6}
                for k, v in stages.items()
            }
            samples[name][str(count)] = [v / 1e6 for v in stages["wall"]]
        per_count = [np.asarray(samples[name][str(c)]) for c in counts]
        slope, intercept = ols_slope(counts, [np.median(s) for s in per_count])
        lo, hi = bootstrap_slope(counts, per_count, n_boot, seed)
        slopes[name] = SlopeFit(slope, intercept, lo, hi)
    return LatencyReport(counts, reps, warmup, buckets, samples, slopes, {k: v for k, v in invocations.items() if v})


# ------------------------------------------------------------------ scenes


def bench_scenes(world: WorldConfig, counts=(1, 2, 4, 8, 16), grid_stride: int = 32, seed: int = 0) -> dict[int, SceneSequence]:
    """Scenes identical except for how many standing pedestrians are present.

    Pedestrians stand on the two sidewalks, one per grid cell, so every one
    of them is a separate detection slot. Scene ``k`` holds the first ``k``
    of a fixed placement list.
    """
    world.validate()
    H, W = world.image_height, world.image_width
    s = world.scale
    top, bottom = world.road_band
    rows = [r for r in range(H // grid_stride) if (r + 1) * grid_stride <= top or r * grid_stride >= bottom]
    cells = [(r, c) for c in range(W // grid_stride) for r in rows]
    rng = np.random.default_rng(seed)
    cells = [cells[n] for n in rng.permutation(len(cells))]
    need = max(counts)
    if need > len(cells):
        raise ConfigError("counts", f"at most {len(cells)} sidewalk cells for {need} pedestrians")
    car_y = (top + (bottom - top) / 4, top + 3 * (bottom - top) / 4)
    background = [
        AgentState(100, AgentClass.CROSSWALK, (W * 0.45, (top + bottom) / 2), (40 * s, bottom - top)),
        AgentState(101, AgentClass.VEHICLE, (W * 0.2, car_y[0]), (50 * s, 22 * s)),
        AgentState(102, AgentClass.VEHICLE, (W * 0.75, car_y[1]), (50 * s, 22 * s)),
    ]
    peds = []
    for n, (r, c) in enumerate(cells[:need]):
        below = r * grid_stride >= bottom
        peds.append(
            AgentState(
                n,
                AgentClass.PEDESTRIAN,
                ((c + 0.5) * grid_stride, (r + 0.5) * grid_stride),
                (12 * s, 28 * s),
                intent=NOT_CROSS,
                heading=(1.0, 0.0) if n % 2 else (0.0, -1.0 if below else 1.0),
            )
        )
    return {k: simulate(world, background + peds[:k]) for k in counts}


# ------------------------------------------------------------------ memory


@dataclass
class MemoryReport:
    detector: dict
    auxiliary: dict
    sequential: dict
    single_shot_total_bytes: int
    sequential_total_bytes: int
    delta_bytes: int  # crop encoder + recurrent head minus auxiliary head

    def to_dict(self) -> dict:
        return asdict(self)


def memory_report(detector: nn.Module, auxiliary: nn.Module, baseline: nn.Module) -> MemoryReport:
    """Parameter bytes per pipeline; shared detector layers are counted once."""
    det, aux, seq = parameter_count(detector), parameter_count(auxiliary), parameter_count(baseline)
    ss = det.total_bytes + aux.total_bytes
    sq = det.total_bytes + seq.total_bytes
    return MemoryReport(det.to_dict(), aux.to_dict(), seq.to_dict(), ss, sq, sq - ss)


def memory_report_from_checkpoints(model_checkpoint, baseline_checkpoint) -> MemoryReport:
    from pedintent.training import load_baseline, load_model

    for p in (model_checkpoint, baseline_checkpoint):
        if not Path(p).is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
    model, _ = load_model(model_checkpoint)
    if model.auxiliary is None:
        raise ConfigError("model_checkpoint", "checkpoint has no auxiliary head")
    baseline, _ = load_baseline(baseline_checkpoint)
    return memory_report(model.detector, model.auxiliary, baseline)


def conv_macs(module: nn.Module, example: torch.Tensor) -> int:
    """Multiply-accumulates of every Conv2d/Linear for one forward pass on ``example``."""
    total = 0

    def hook(m, inp, out):
        nonlocal total
        if isinstance(m, nn.Conv2d):
            k = m.kernel_size[0] * m.kernel_size[1] * (m.in_channels // m.groups)
            total += out.numel() * k
        elif isinstance(m, nn.Linear):
            total += out.numel() * m.in_features

    handles = [m.register_forward_hook(hook) for m in module.modules() if isinstance(m, (nn.Conv2d, nn.Linear))]
    try:
        with torch.no_grad():
            module(example)
    finally:
        for h in handles:
            h.remove()
    return total
