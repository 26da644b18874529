"""Tap-layer ablation: one auxiliary_frozen run per candidate layer."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

from pedintent.config import RunConfig
from pedintent.errors import ConfigError


@dataclass(frozen=True)
class AblationRow:
    tap_layer: int
    accuracy: float
    f1: float
    detection_map: float

    def to_dict(self) -> dict:
        return asdict(self)


def unique_layers(layers) -> list[int]:
    layers = [int(x) for x in layers]
    uniq = sorted(set(layers))
    if len(uniq) != len(layers):
        warnings.warn(f"duplicate tap layers dropped: {layers} -> {uniq}", stacklevel=3)
    if len(uniq) < 2:
        raise ConfigError("layers", "ablation needs at least two distinct tap layers")
    return uniq


def ablate_tap_layer(
    layers,
    manifest,
    detector_checkpoint,
    run_config: RunConfig | None = None,
    out_dir=None,
    train_data=None,
    test_data=None,
    epochs: int | None = None,
) -> list[AblationRow]:
    """Train the auxiliary head at each tap layer on a fixed detector and data."""
    from pedintent.training import TrainConfig, evaluate_model, load_split, train

    rc = run_config or RunConfig()
    uniq = unique_layers(layers)
    for L in uniq:  # fail before any training starts
        rc.auxiliary(rc.detector.with_tap(L).validate(rc.grid.stride))
    train_data = train_data if train_data is not None else load_split(manifest, "train", rc.grid)
    test_data = test_data if test_data is not None else load_split(manifest, "test", rc.grid)
    cfg = TrainConfig.from_run_config(rc, "auxiliary_frozen", epochs=epochs)
    ev = rc.raw["eval"]
    rows = []
    for L in uniq:
        out = Path(out_dir) / f"L{L}" if out_dir is not None else None
        run = train("auxiliary_frozen", manifest, cfg, rc, out, detector_checkpoint, tap_layer=L, data=train_data)
        mb = evaluate_model(run.model, test_data, rc.grid, ev["conf_threshold"], ev["nms_iou"], (ev["height_filters"][0],))
        rows.append(AblationRow(L, mb.intent_accuracy, mb.intent_f1, mb.detection_map))
    return rows
