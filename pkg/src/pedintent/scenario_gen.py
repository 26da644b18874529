"""Synthetic street scenes with pedestrians whose crossing intent is visible
in their motion and heading.

The world is a horizontal road band with a sidewalk above and below it.
Every agent moves at constant velocity for the whole sequence, and a
pedestrian never changes intent mid-sequence:

* crossers walk toward the road (mostly perpendicular to it), preferring
  the x-range of a crosswalk;
* non-crossers walk parallel to the road, or stand still (some of them
  facing the road, which is why a single frame is not always enough);
* vehicles drive along the road in two lanes with a shared lane speed.

Rendering is flat shaded with one fixed color per class. Every palette
entry is an exact multiple of 1/255 so frames survive a uint8 round trip
bit-for-bit.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from pedintent.errors import ConfigError

FRAME_MAGIC = b"GSQ1"
_HEADER = struct.Struct("<4s4I")


class AgentClass(IntEnum):
    PEDESTRIAN = 0
    CROSSWALK = 1
    VEHICLE = 2
    TRAFFIC_LIGHT = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "AgentClass":
        return cls[label.upper()]


CROSS = "cross"
NOT_CROSS = "not_cross"
NOT_APPLICABLE = "not_applicable"
INTENT_INDEX = {NOT_CROSS: 0, CROSS: 1}

# Colors are (r, g, b) in 0..255; stored as k/255 floats.
BACKGROUND = (0, 0, 0)
PALETTE = {
    AgentClass.PEDESTRIAN: (230, 160, 40),
    AgentClass.CROSSWALK: (200, 200, 200),
    AgentClass.VEHICLE: (40, 90, 220),
    AgentClass.TRAFFIC_LIGHT: (70, 70, 70),
}
CROSSWALK_STRIPE = (110, 110, 110)
HEADING_MARKER = (255, 40, 160)
LIGHT_LAMP = {"red": (255, 0, 0), "green": (0, 255, 0)}


@dataclass(frozen=True)
class WorldConfig:
    image_height: int = 192
    image_width: int = 320
    road_band: tuple[int, int] = (64, 128)
    n_pedestrians: int = 2
    n_vehicles: int = 2
    n_crosswalks: int = 1
    has_traffic_light: bool = True
    crosser_fraction: float = 0.5
    seq_len: int = 8
    seed: int = 0
    # Exact number of crossers; None draws Binomial(n_pedestrians, crosser_fraction).
    n_crossers: int | None = None

    def validate(self) -> "WorldConfig":
        if self.image_height <= 0:
            raise ConfigError("image_height", "must be positive")
        if self.image_width <= 0:
            raise ConfigError("image_width", "must be positive")
        top, bottom = self.road_band
        if not (0 <= top < bottom <= self.image_height):
            raise ConfigError("road_band", f"{self.road_band} not within [0, {self.image_height}]")
        if not 0.0 <= self.crosser_fraction <= 1.0:
            raise ConfigError("crosser_fraction", f"{self.crosser_fraction} not in [0, 1]")
        if self.seq_len < 2:
            raise ConfigError("seq_len", "must be >= 2")
        for name in ("n_pedestrians", "n_vehicles", "n_crosswalks"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.n_crossers is not None and not 0 <= self.n_crossers <= self.n_pedestrians:
            raise ConfigError("n_crossers", "must lie in [0, n_pedestrians]")
        return self

    @property
    def scale(self) -> float:
        """Object-size scale relative to the 192 px desk image height."""
        return self.image_height / 192.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["road_band"] = list(self.road_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        d = dict(d)
        if "road_band" in d:
            d["road_band"] = tuple(d["road_band"])
        return cls(**d)


@dataclass(frozen=True)
class AgentState:
    track_id: int
    cls: AgentClass
    center: tuple[float, float]
    size: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    intent: str = NOT_APPLICABLE
    heading: tuple[float, float] = (0.0, 0.0)
    light_state: str | None = None

    def __post_init__(self):
        is_ped = self.cls == AgentClass.PEDESTRIAN
        if is_ped != (self.intent != NOT_APPLICABLE):
            raise ConfigError("intent", f"{self.intent!r} invalid for class {self.cls.label}")
        if self.cls in (AgentClass.CROSSWALK, AgentClass.TRAFFIC_LIGHT) and self.velocity != (0.0, 0.0):
            raise ConfigError("velocity", f"{self.cls.label} must be static")

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (*self.center, *self.size)

    def corners(self) -> tuple[float, float, float, float]:
        (cx, cy), (w, h) = self.center, self.size
        return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2

    def advanced(self, n_frames: int) -> "AgentState":
        cx, cy = self.center
        vx, vy = self.velocity
        return replace(self, center=(cx + n_frames * vx, cy + n_frames * vy))

    def clipped(self, height: int, width: int) -> "AgentState | None":
        x0, y0, x1, y1 = self.corners()
        x0, x1 = max(x0, 0.0), min(x1, float(width))
        y0, y1 = max(y0, 0.0), min(y1, float(height))
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            return None
        return replace(self, center=((x0 + x1) / 2, (y0 + y1) / 2), size=(x1 - x0, y1 - y0))

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "class": self.cls.label,
            "box": [float(v) for v in self.box],
            "velocity": [float(v) for v in self.velocity],
            "intent": self.intent,
            "heading": [float(v) for v in self.heading],
            "light_state": self.light_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        cx, cy, w, h = d["box"]
        return cls(
            track_id=int(d["track_id"]),
            cls=AgentClass.from_label(d["class"]),
            center=(cx, cy),
            size=(w, h),
            velocity=tuple(d["velocity"]),
            intent=d["intent"],
            heading=tuple(d["heading"]),
            light_state=d.get("light_state"),
        )


@dataclass(frozen=True)
class WorldState:
    """Agents at one instant, before clipping to the image."""

    height: int
    width: int
    agents: tuple[AgentState, ...] = ()


@dataclass
class SceneSequence:
    frames: list[np.ndarray]  # each (3, H, W) float32 in [0, 1]
    annotations: list[list[AgentState]]
    seed: int | None = None
    config: WorldConfig | None = None

    def __post_init__(self):
        if len(self.frames) != len(self.annotations):
            raise ValueError("frames and annotations differ in length")

    @property
    def seq_len(self) -> int:
        return len(self.frames)

    def stacked(self) -> np.ndarray:
        return np.stack(self.frames)

    def pedestrians(self, frame: int = -1) -> list[AgentState]:
        return [a for a in self.annotations[frame] if a.cls == AgentClass.PEDESTRIAN]


# --------------------------------------------------------------------- rendering


def _span(lo: float, hi: float, limit: int) -> slice:
    # pixel c is covered when its center c + 0.5 lies in [lo, hi)
    a = max(0, math.ceil(lo - 0.5))
    b = min(limit, math.ceil(hi - 0.5))
    return slice(a, max(a, b))


def _fill(img: np.ndarray, x0, y0, x1, y1, color) -> None:
    rows = _span(y0, y1, img.shape[1])
    cols = _span(x0, x1, img.shape[2])
    img[:, rows, cols] = np.asarray(color, dtype=np.float32)[:, None, None] / np.float32(255)


def marker_box(agent: AgentState) -> tuple[float, float, float, float]:
    """Corners of the heading marker drawn at the pedestrian's leading edge."""
    (cx, cy), (w, h) = agent.center, agent.size
    hx, hy = agent.heading
    side = max(2.0, 0.35 * w)
    mx, my = cx + hx * w / 2, cy + hy * h / 2
    return mx - side / 2, my - side / 2, mx + side / 2, my + side / 2


def _draw(img: np.ndarray, agent: AgentState) -> None:
    x0, y0, x1, y1 = agent.corners()
    _fill(img, x0, y0, x1, y1, PALETTE[agent.cls])
    if agent.cls == AgentClass.CROSSWALK:
        stripe = 6.0 * max(1.0, agent.size[0] / 40.0)
        y = y0 + stripe
        while y < y1:
            _fill(img, x0, y, x1, min(y + stripe, y1), CROSSWALK_STRIPE)
            y += 2 * stripe
    elif agent.cls == AgentClass.TRAFFIC_LIGHT and agent.light_state is not None:
        w, h = agent.size
        pad = w * 0.2
        if agent.light_state == "red":
            _fill(img, x0 + pad, y0 + pad, x1 - pad, y0 + h / 3, LIGHT_LAMP["red"])
        else:
            _fill(img, x0 + pad, y1 - h / 3, x1 - pad, y1 - pad, LIGHT_LAMP["green"])
    elif agent.cls == AgentClass.PEDESTRIAN and agent.heading != (0.0, 0.0):
        _fill(img, *marker_box(agent), HEADING_MARKER)


_DRAW_ORDER = (AgentClass.CROSSWALK, AgentClass.VEHICLE, AgentClass.TRAFFIC_LIGHT, AgentClass.PEDESTRIAN)


def render_frame(world: WorldState) -> np.ndarray:
    """Rasterize one instant to a (3, H, W) float32 image in [0, 1]."""
    img = np.empty((3, world.height, world.width), dtype=np.float32)
    img[:] = np.asarray(BACKGROUND, dtype=np.float32)[:, None, None] / np.float32(255)
    for cls in _DRAW_ORDER:
        for agent in world.agents:
            if agent.cls == cls:
                _draw(img, agent)
    return img


# -------------------------------------------------------------------- simulation


def _iou(a: tuple, b: tuple) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def _overlaps_any(agent: AgentState, others: list[AgentState], n_frames: int, margin: float = 2.0) -> bool:
    for f in range(n_frames):
        x0, y0, x1, y1 = agent.advanced(f).corners()
        mine = (x0 - margin, y0 - margin, x1 + margin, y1 + margin)
        for other in others:
            if _iou(mine, other.advanced(f).corners()) > 0.0:
                return True
    return False


def _place_static(config: WorldConfig, rng: np.random.Generator, next_id) -> list[AgentState]:
    s = config.scale
    top, bottom = config.road_band
    W = config.image_width
    agents: list[AgentState] = []
    cw_w = 40.0 * s
    for _ in range(config.n_crosswalks):
        for _attempt in range(100):
            cx = float(rng.uniform(cw_w, W - cw_w))
            if all(abs(cx - a.center[0]) > 2 * cw_w for a in agents):
                break
        else:
            raise ConfigError("n_crosswalks", "too many crosswalks for the image width")
        agents.append(AgentState(next_id(), AgentClass.CROSSWALK, (cx, (top + bottom) / 2), (cw_w, float(bottom - top))))
    if config.has_traffic_light:
        lw, lh = 10.0 * s, 20.0 * s
        if agents:
            anchor = agents[0].center[0] + (cw_w / 2 + lw) * (1 if rng.random() < 0.5 else -1)
        else:
            anchor = float(rng.uniform(lw, W - lw))
        cx = float(np.clip(anchor, lw, W - lw))
        cy = max(lh / 2, top - lh / 2 - 2.0 * s)
        state = "red" if rng.random() < 0.5 else "green"
        agents.append(AgentState(next_id(), AgentClass.TRAFFIC_LIGHT, (cx, cy), (lw, lh), light_state=state))
    return agents


def _place_vehicles(config: WorldConfig, rng: np.random.Generator, next_id) -> list[AgentState]:
    s = config.scale
    top, bottom = config.road_band
    band = bottom - top
    W = config.image_width
    travel = config.seq_len - 1
    lanes = [(top + band / 4, 1.0, float(rng.uniform(3, 6)) * s), (top + 3 * band / 4, -1.0, float(rng.uniform(3, 6)) * s)]
    vehicles: list[AgentState] = []
    for _ in range(config.n_vehicles):
        for _attempt in range(100):
            lane_y, direction, speed = lanes[int(rng.integers(2))]
            w = float(rng.uniform(46, 56)) * s
            h = min(float(rng.uniform(20, 26)) * s, band / 2 - 2)
            lo, hi = w / 2, W - w / 2 - speed * travel
            if hi <= lo:
                continue
            x = float(rng.uniform(lo, hi))
            if direction < 0:
                x = W - x
            v = AgentState(next_id(), AgentClass.VEHICLE, (x, lane_y), (w, h), velocity=(direction * speed, 0.0))
            same_lane = [o for o in vehicles if o.center[1] == lane_y]
            if not _overlaps_any(v, same_lane, 1, margin=4.0 * s):
                vehicles.append(v)
                break
        else:
            raise ConfigError("n_vehicles", "cannot place vehicles without overlap")
    return vehicles


def _sample_pedestrian(
    config: WorldConfig, rng: np.random.Generator, track_id: int, intent: str, crosswalks: list[AgentState]
) -> AgentState:
    s = config.scale
    top, bottom = config.road_band
    H, W = config.image_height, config.image_width
    travel = config.seq_len - 1
    w = float(rng.uniform(11, 15)) * s
    h = float(rng.uniform(28, 36)) * s
    below = bool(rng.random() < 0.5) if top > 0 else True
    if bottom >= H:
        below = False
    toward_road = -1.0 if below else 1.0
    if below:
        y_lo, y_hi = bottom + h / 2 + 2, H - h / 2 - 2
    else:
        y_lo, y_hi = h / 2 + 2, top - h / 2 - 2
    y = float(rng.uniform(y_lo, max(y_lo, y_hi)))
    margin = w / 2 + 5.0 * s * travel + 2
    if intent == CROSS:
        if crosswalks and rng.random() < 0.7:
            cw = crosswalks[int(rng.integers(len(crosswalks)))]
            half = max(0.0, cw.size[0] / 2 - w / 2)
            x = float(rng.uniform(cw.center[0] - half, cw.center[0] + half))
        else:
            x = float(rng.uniform(w / 2 + 2, W - w / 2 - 2))
        speed = float(rng.uniform(2.5, 5.0)) * s
        vx = 0.0
        if crosswalks:
            nearest = min(crosswalks, key=lambda c: abs(c.center[0] - x))
            if abs(nearest.center[0] - x) > nearest.size[0] / 2:
                vx = float(np.clip((nearest.center[0] - x) / max(travel, 1), -0.25 * speed, 0.25 * speed))
        velocity = (vx, toward_road * speed)
        norm = math.hypot(*velocity)
        heading = (velocity[0] / norm, velocity[1] / norm)
    else:
        x = float(rng.uniform(margin, max(margin, W - margin)))
        behavior = rng.random()
        if behavior < 0.6:
            direction = 1.0 if rng.random() < 0.5 else -1.0
            velocity = (direction * float(rng.uniform(2.0, 5.0)) * s, 0.0)
            heading = (direction, 0.0)
        elif behavior < 0.85:
            # waiting at the curb, facing the road
            velocity = (0.0, 0.0)
            heading = (0.0, toward_road)
        else:
            velocity = (0.0, 0.0)
            heading = (1.0 if rng.random() < 0.5 else -1.0, 0.0)
    return AgentState(track_id, AgentClass.PEDESTRIAN, (x, y), (w, h), velocity, intent, heading)


def _place_pedestrians(
    config: WorldConfig, rng: np.random.Generator, next_id, static: list[AgentState]
) -> list[AgentState]:
    n = config.n_pedestrians
    n_cross = config.n_crossers if config.n_crossers is not None else int(rng.binomial(n, config.crosser_fraction))
    intents = [CROSS] * n_cross + [NOT_CROSS] * (n - n_cross)
    rng.shuffle(intents)
    crosswalks = [a for a in static if a.cls == AgentClass.CROSSWALK]
    lights = [a for a in static if a.cls == AgentClass.TRAFFIC_LIGHT]
    peds: list[AgentState] = []
    for intent in intents:
        track_id = next_id()
        for _attempt in range(200):
            ped = _sample_pedestrian(config, rng, track_id, intent, crosswalks)
            if not _overlaps_any(ped, peds + lights, config.seq_len):
                peds.append(ped)
                break
        else:
            raise ConfigError("n_pedestrians", f"cannot place {n} non-overlapping pedestrians")
    return peds


def initial_agents(config: WorldConfig, seed: int) -> list[AgentState]:
    """Agents at frame 0 for ``(config, seed)``."""
    config.validate()
    rng = np.random.default_rng(seed)
    counter = iter(range(1_000_000))
    next_id = lambda: next(counter)  # noqa: E731
    static = _place_static(config, rng, next_id)
    vehicles = _place_vehicles(config, rng, next_id)
    peds = _place_pedestrians(config, rng, next_id, static)
    return static + vehicles + peds


def simulate(config: WorldConfig, agents: list[AgentState], seed: int | None = None) -> SceneSequence:
    """Roll constant-velocity agents forward and render every frame."""
    frames, annotations = [], []
    for f in range(config.seq_len):
        state = [a.advanced(f) for a in agents]
        frames.append(render_frame(WorldState(config.image_height, config.image_width, tuple(state))))
        visible = [c for c in (a.clipped(config.image_height, config.image_width) for a in state) if c is not None]
        annotations.append(visible)
    return SceneSequence(frames, annotations, seed=seed, config=config)


def generate_sequence(config: WorldConfig, seed: int) -> SceneSequence:
    return simulate(config, initial_agents(config, seed), seed=seed)


# ----------------------------------------------------------------------- storage


def write_frames(path: Path, frames: np.ndarray) -> None:
    t, c, h, w = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FRAME_MAGIC, t, c, h, w))
        fh.write(np.ascontiguousarray(frames, dtype="<f4").tobytes())


def read_frames(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, t, c, h, w = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != FRAME_MAGIC:
            raise OSError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != t * c * h * w:
        raise OSError(f"{path}: truncated payload")
    return data.reshape(t, c, h, w).astype(np.float32)


def save_sequence(seq: SceneSequence, seq_dir: Path, seq_id: str) -> None:
    seq_dir.mkdir(parents=True, exist_ok=True)
    write_frames(seq_dir / "frames.bin", seq.stacked())
    doc = {
        "seq_id": seq_id,
        "seed": seq.seed,
        "image_size": [seq.frames[0].shape[1], seq.frames[0].shape[2]],
        "seq_len": seq.seq_len,
        "world": seq.config.to_dict() if seq.config else None,
        "frames": [[a.to_dict() for a in frame] for frame in seq.annotations],
    }
    (seq_dir / "annotations.json").write_text(json.dumps(doc, indent=1))


def load_sequence(seq_dir: Path | str) -> SceneSequence:
    seq_dir = Path(seq_dir)
    frames = read_frames(seq_dir / "frames.bin")
    doc = json.loads((seq_dir / "annotations.json").read_text())
    annotations = [[AgentState.from_dict(a) for a in frame] for frame in doc["frames"]]
    world = WorldConfig.from_dict(doc["world"]) if doc.get("world") else None
    return SceneSequence(list(frames), annotations, seed=doc["seed"], config=world)


# ----------------------------------------------------------------------- dataset


@dataclass(frozen=True)
class _Job:
    config: WorldConfig
    seed: int
    seq_dir: str
    seq_id: str


def _run_job(job: _Job) -> dict:
    seq = generate_sequence(job.config, job.seed)
    save_sequence(seq, Path(job.seq_dir), job.seq_id)
    tracks = {a.track_id: a.intent for frame in seq.annotations for a in frame if a.cls == AgentClass.PEDESTRIAN}
    per_class = {c.label: sum(1 for a in seq.annotations[-1] if a.cls == c) for c in AgentClass}
    return {
        "n_pedestrians": len(tracks),
        "n_crossers": sum(1 for v in tracks.values() if v == CROSS),
        "mean_peds_per_frame": float(np.mean([len(seq.pedestrians(f)) for f in range(seq.seq_len)])),
        "final_frame_boxes": per_class,
    }


def _crosser_counts(ped_counts: list[int], fraction: float, rng: np.random.Generator) -> list[int]:
    total = sum(ped_counts)
    labels = np.zeros(total, dtype=int)
    labels[: int(round(fraction * total))] = 1
    rng.shuffle(labels)
    out, start = [], 0
    for n in ped_counts:
        out.append(int(labels[start : start + n].sum()))
        start += n
    return out


def _allocate_counts(weights: dict[int, float], n: int, rng: np.random.Generator) -> list[int]:
    # largest-remainder apportionment, then shuffled: split means track the weights exactly
    keys = sorted(weights)
    p = np.array([weights[k] for k in keys], dtype=float)
    quota = p / p.sum() * n
    alloc = np.floor(quota).astype(int)
    for idx in np.argsort(-(quota - alloc), kind="stable")[: n - alloc.sum()]:
        alloc[idx] += 1
    counts = np.repeat(keys, alloc)
    rng.shuffle(counts)
    return [int(c) for c in counts]


def split_seed(base_seed: int, split: str, index: int) -> int:
    offset = {"train": 0, "test": 500_000}[split]
    return base_seed * 1_000_000 + offset + index


def dataset_build(
    config: WorldConfig,
    n_train: int,
    n_test: int,
    out_dir: Path | str,
    ped_count_weights: dict[int, float] | None = None,
    workers: int | None = None,
) -> dict:
    """Generate train/test splits under ``out_dir`` and write ``manifest.json``.

    When ``ped_count_weights`` is given, each sequence draws its pedestrian
    count from it; otherwise every sequence uses ``config.n_pedestrians``.
    Crossers are dealt across each split so its crosser share matches
    ``config.crosser_fraction`` up to rounding.
    """
    config.validate()
    out = Path(out_dir)
    workers = workers or int(os.environ.get("PEDINTENT_WORKERS", "1"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    manifest: dict = {"version": 1, "world": config.to_dict(), "ped_count_weights": None, "splits": {}, "stats": {}}
    if ped_count_weights:
        manifest["ped_count_weights"] = {str(k): float(v) for k, v in sorted(ped_count_weights.items())}

    for split, n in (("train", n_train), ("test", n_test)):
        rng = np.random.default_rng([config.seed, 0 if split == "train" else 1])
        if ped_count_weights:
            ped_counts = _allocate_counts(ped_count_weights, n, rng)
        else:
            ped_counts = [config.n_pedestrians] * n
        crossers = _crosser_counts(ped_counts, config.crosser_fraction, rng)
        jobs = []
        for i in range(n):
            seq_id = f"{i:05d}"
            seq_cfg = replace(config, n_pedestrians=ped_counts[i], n_crossers=crossers[i])
            jobs.append(_Job(seq_cfg, split_seed(config.seed, split, i), str(out / split / seq_id), seq_id))
        try:
            if workers > 1:
                with ProcessPoolExecutor(workers) as pool:
                    results = list(pool.map(_run_job, jobs))
            else:
                results = [_run_job(j) for j in jobs]
        except OSError as exc:
            raise OSError(f"failed writing {split} split under {out}: {exc}") from exc

        entries = []
        for job, res in zip(jobs, results):
            entries.append({"seq_id": job.seq_id, "seed": job.seed, "path": f"{split}/{job.seq_id}", **res})
        manifest["splits"][split] = entries
        n_peds = sum(e["n_pedestrians"] for e in entries)
        n_cross = sum(e["n_crossers"] for e in entries)
        manifest["stats"][split] = {
            "n_sequences": n,
            "n_pedestrian_tracks": n_peds,
            "n_crossers": n_cross,
            "crosser_fraction": n_cross / n_peds if n_peds else 0.0,
            "mean_peds_per_frame": float(np.mean([e["mean_peds_per_frame"] for e in entries])) if entries else 0.0,
            "final_frame_boxes": {
                c.label: sum(e["final_frame_boxes"][c.label] for e in entries) for c in AgentClass
            },
        }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_manifest(path: Path | str) -> tuple[dict, Path]:
    """Return ``(manifest, root)``; ``path`` may be the file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise OSError(f"manifest not found: {path}")
    return json.loads(path.read_text()), path.parent
