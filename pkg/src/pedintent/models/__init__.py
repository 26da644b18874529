"""Networks: tapped grid detector, ConvLSTM intention head, crop baseline."""

from __future__ import annotations

import torch
from torch import nn

from pedintent.errors import ConfigError
from pedintent.models.convlstm import AuxiliaryConfig, AuxiliaryHead, ConvLSTMCell, convlstm_cell
from pedintent.models.detector import ConvBlock, ConvBlockSpec, Detector, DetectorConfig, receptive_interval
from pedintent.models.losses import BOX_WEIGHT, LAMBDA_NOOBJ, detection_loss, intent_loss
from pedintent.models.params import (
    ParamReport,
    freeze,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    tensors_hash,
)
from pedintent.models.sequential import SequentialBaseline, SequentialBaselineConfig, crop_box, crop_sequence

__all__ = [
    "AuxiliaryConfig",
    "AuxiliaryHead",
    "BOX_WEIGHT",
    "ConvBlock",
    "ConvBlockSpec",
    "ConvLSTMCell",
    "Detector",
    "DetectorConfig",
    "IntentModel",
    "LAMBDA_NOOBJ",
    "ParamReport",
    "SequentialBaseline",
    "SequentialBaselineConfig",
    "auxiliary_config_for",
    "convlstm_cell",
    "crop_box",
    "crop_sequence",
    "detection_loss",
    "freeze",
    "intent_loss",
    "load_checkpoint",
    "parameter_count",
    "receptive_interval",
    "save_checkpoint",
    "tensors_hash",
]


def auxiliary_config_for(
    detector: DetectorConfig,
    grid_stride: int,
    seq_len: int,
    hidden_channels=(32, 32, 32),
    kernel=(3, 3),
    n_intents: int = 2,
) -> AuxiliaryConfig:
    """Size the auxiliary head for the detector's current tap layer."""
    tap_stride = detector.stride_at(detector.tap_layer)
    if tap_stride > grid_stride or grid_stride % tap_stride:
        raise ConfigError(
            "tap_layer", f"tap stride {tap_stride} cannot be reduced to grid stride {grid_stride} (tap smaller than grid)"
        )
    return AuxiliaryConfig(
        tap_channels=detector.channels_at(detector.tap_layer),
        downsample=grid_stride // tap_stride,
        hidden_channels=tuple(hidden_channels),
        kernel=tuple(kernel),
        seq_len=seq_len,
        n_anchors=detector.n_anchors,
        n_intents=n_intents,
    )


class IntentModel(nn.Module):
    """Detector plus (optionally) the auxiliary head branched at the tap."""

    def __init__(self, detector: DetectorConfig, auxiliary: AuxiliaryConfig | None = None):
        super().__init__()
        self.detector = Detector(detector)
        self.auxiliary = AuxiliaryHead(auxiliary) if auxiliary is not None else None

    def forward_frames(self, frames: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``frames``: (B, t, C, H, W) -> taps (B, t, c, h, w) and the raw grid of the last frame.

        Blocks up to the tap run on every frame; the upper blocks and the
        head run on the last frame only, since only it is decoded.
        """
        b, t = frames.shape[:2]
        taps = self.detector.forward_tap(frames.flatten(0, 1))
        taps = taps.view(b, t, *taps.shape[1:])
        x = taps[:, -1]
        for block in self.detector.blocks[self.detector.config.tap_layer :]:
            x = block(x)
        return taps, self.detector.to_grid(self.detector.head(x))

    def forward(self, frames: torch.Tensor):
        taps, raw = self.forward_frames(frames)
        intent = self.auxiliary(taps) if self.auxiliary is not None else None
        return raw, intent
