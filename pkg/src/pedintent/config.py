"""Named presets and the merged run configuration used by the CLI.

A run config is a nested JSON document with sections ``world``, ``grid``,
``detector``, ``auxiliary``, ``sequential``, ``dataset``, ``train``,
``eval`` and ``bench``. Files passed with ``--config`` are deep-merged over
the chosen preset; command-line flags are merged last.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from pedintent.errors import ConfigError
from pedintent.grid_codec import GridSpec
from pedintent.models import AuxiliaryConfig, ConvBlockSpec, DetectorConfig, SequentialBaselineConfig, auxiliary_config_for
from pedintent.scenario_gen import WorldConfig

# Mean of this distribution is 2.12 pedestrians per sequence.
DESK_PED_COUNTS = {1: 0.2, 2: 0.48, 3: 0.32}

DESK_ANCHORS = ((10.0, 20.0), (13.0, 32.0), (40.0, 64.0), (52.0, 24.0), (24.0, 12.0))

DESK_BLOCKS = (
    ConvBlockSpec(8, 3, 2),
    ConvBlockSpec(16, 3, 2),
    ConvBlockSpec(16, 3, 1),
    ConvBlockSpec(32, 3, 2),
    ConvBlockSpec(32, 3, 1),
    ConvBlockSpec(64, 3, 2),
    ConvBlockSpec(64, 3, 2),
    ConvBlockSpec(64, 3, 1),
)

# 21 blocks so that an 18th-layer tap exists; it sits at stride 32.
PAPER_BLOCKS = (
    ConvBlockSpec(16, 3, 2),
    ConvBlockSpec(32, 3, 2),
    ConvBlockSpec(32, 3, 1),
    ConvBlockSpec(16, 1, 1),
    ConvBlockSpec(32, 3, 1),
    ConvBlockSpec(64, 3, 2),
    ConvBlockSpec(64, 3, 1),
    ConvBlockSpec(32, 1, 1),
    ConvBlockSpec(64, 3, 1),
    ConvBlockSpec(128, 3, 2),
    ConvBlockSpec(128, 3, 1),
    ConvBlockSpec(64, 1, 1),
    ConvBlockSpec(128, 3, 1),
    ConvBlockSpec(256, 3, 2),
    ConvBlockSpec(256, 3, 1),
    ConvBlockSpec(128, 1, 1),
    ConvBlockSpec(256, 3, 1),
    ConvBlockSpec(128, 1, 1),
    ConvBlockSpec(256, 3, 1),
    ConvBlockSpec(256, 3, 1),
    ConvBlockSpec(256, 3, 1),
)


def _desk() -> dict:
    return {
        "world": WorldConfig().to_dict(),
        "grid": GridSpec(6, 10, 32, DESK_ANCHORS).to_dict(),
        "detector": DetectorConfig(DESK_BLOCKS, tap_layer=5, n_anchors=5).to_dict(),
        "auxiliary": {"hidden_channels": [32, 32, 32], "kernel": [3, 3]},
        "sequential": SequentialBaselineConfig().to_dict(),
        "dataset": {"n_train": 200, "n_test": 50, "ped_count_weights": {str(k): v for k, v in DESK_PED_COUNTS.items()}},
        "train": {
            "epochs": 30,
            "batch_size": 4,
            "learning_rate": 1e-3,
            "optimizer": "adam",
            "lambda_det": 1.0,
            "lambda_int": 1.0,
            "seed": 0,
            "grad_clip": 5.0,
            "augment": "flip",
        },
        "eval": {"conf_threshold": 0.5, "nms_iou": 0.45, "height_filters": [0.0, 30.0]},
        "bench": {"counts": [1, 2, 4, 8, 16], "reps": 30, "warmup": 5, "n_boot": 1000},
    }


def _paper_shape() -> dict:
    cfg = _desk()
    s = 352 / 192
    cfg["world"] = WorldConfig(
        image_height=352, image_width=640, road_band=(117, 235), seq_len=15
    ).to_dict()
    anchors = tuple((round(w * s, 2), round(h * s, 2)) for w, h in DESK_ANCHORS)
    cfg["grid"] = GridSpec(11, 20, 32, anchors).to_dict()
    cfg["detector"] = DetectorConfig(PAPER_BLOCKS, tap_layer=18, n_anchors=5).to_dict()
    cfg["sequential"] = SequentialBaselineConfig(seq_len=15).to_dict()
    return cfg


PRESETS = {"desk": _desk, "paper-shape": _paper_shape}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "ped_count_weights":
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    raw: dict = field(default_factory=_desk)

    @classmethod
    def from_preset(cls, name: str = "desk", file: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        raw = PRESETS[name]()
        if file is not None:
            try:
                raw = deep_merge(raw, json.loads(Path(file).read_text()))
            except json.JSONDecodeError as exc:
                raise ConfigError("config", f"{file}: {exc}") from exc
        if overrides:
            raw = deep_merge(raw, overrides)
        cfg = cls(raw)
        cfg.validate()
        return cfg

    # typed views -------------------------------------------------------

    @property
    def world(self) -> WorldConfig:
        return WorldConfig.from_dict(self.raw["world"])

    @property
    def grid(self) -> GridSpec:
        return GridSpec.from_dict(self.raw["grid"])

    @property
    def detector(self) -> DetectorConfig:
        return DetectorConfig.from_dict(self.raw["detector"])

    def auxiliary(self, detector: DetectorConfig | None = None) -> AuxiliaryConfig:
        aux = self.raw["auxiliary"]
        return auxiliary_config_for(
            detector or self.detector,
            self.grid.stride,
            self.world.seq_len,
            hidden_channels=aux["hidden_channels"],
            kernel=aux["kernel"],
        )

    @property
    def sequential(self) -> SequentialBaselineConfig:
        return SequentialBaselineConfig.from_dict(self.raw["sequential"])

    @property
    def ped_count_weights(self) -> dict[int, float] | None:
        w = self.raw["dataset"].get("ped_count_weights")
        return {int(k): float(v) for k, v in w.items()} if w else None

    def validate(self) -> None:
        try:
            world = self.world.validate()
            grid = self.grid
            grid.check_image(world.image_height, world.image_width)
            det = self.detector.validate(grid.stride)
            if det.n_anchors != grid.A or det.n_classes != grid.n_classes:
                raise ConfigError("detector", "anchor/class counts disagree with the grid")
            self.auxiliary(det)
            if self.sequential.seq_len != world.seq_len:
                raise ConfigError("sequential.seq_len", "must equal world.seq_len")
        except (TypeError, KeyError) as exc:
            raise ConfigError("config", f"malformed configuration: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)
